"""Logging for the WDN DAE toolkit"""

import logging
import os

from pythonjsonlogger import jsonlogger

from .error_handler import ConfigError

TEXT_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
JSON_FIELDS = '%(asctime)s %(name)s %(levelname)s %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


def resolve_level(level):
    """Accept logging constants or names such as ``"debug"``."""
    if isinstance(level, int):
        return level
    value = logging.getLevelName(str(level).upper())
    if not isinstance(value, int):
        raise ConfigError("log_level", f"Unknown log level '{level}'")
    return value


def setup_logger(name, log_file=None, level=logging.INFO, json_format=False):
    """
    Configure the named logger for console and optional file output.

    Handlers from an earlier call on the same name are closed first, so the
    CLI can re-run setup per command.
    """
    formatter = (jsonlogger.JsonFormatter(JSON_FIELDS, datefmt=DATE_FORMAT) if json_format
                 else logging.Formatter(TEXT_FORMAT, datefmt=DATE_FORMAT))

    logger = logging.getLogger(name)
    logger.setLevel(resolve_level(level))
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    handlers = [logging.StreamHandler()]
    if log_file:
        os.makedirs(os.path.dirname(log_file) or ".", exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding='utf-8'))
    for handler in handlers:
        handler.setFormatter(formatter)
        logger.addHandler(handler)

    return logger
