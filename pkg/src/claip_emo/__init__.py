from claip_emo.version import __version__
