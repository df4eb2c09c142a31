"""Module loggers share the root handler. Lines carry the thread name so
interleaved fold and ablation workers stay readable."""
import logging

from claip_emo import utils
from claip_emo.enums import EnvVars
from claip_emo.errors import EnvVarError

LOG_FORMAT = "{asctime} {threadName:>11} {name} {levelname} {message}"


def log_level() -> int:
    """Level from CLAIP_LOG_LEVEL (a name such as ``debug``), INFO by default."""
    raw = utils.read_env_vars_and_defaults(EnvVars.CLAIP_LOG_LEVEL)
    if raw is None:
        return logging.INFO
    raw = str(raw).upper()
    level = logging.getLevelName(raw)
    if not isinstance(level, int):
        raise EnvVarError(f"{EnvVars.CLAIP_LOG_LEVEL} must name a logging level, got `{raw}`")
    return level


def get_logger(name: str) -> logging.Logger:
    logging.basicConfig()
    logger = logging.getLogger(name)
    logger.setLevel(log_level())

    formatter = logging.Formatter(LOG_FORMAT, style='{')
    for handler in logging.getLogger().handlers:
        handler.setFormatter(formatter)

    return logger
