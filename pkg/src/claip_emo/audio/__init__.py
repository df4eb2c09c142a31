from claip_emo.audio.frontend import AudioFrontend, MelSpectrogram, Waveform, mel_project, stft
