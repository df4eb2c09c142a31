__version__ = "0.3.0"


def get_version() -> str:
    return f"{__version__}"
