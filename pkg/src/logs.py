"""Logging setup. Library modules only emit through loguru's logger; the command line installs the sink."""
import sys

from loguru import logger

LOG_FORMAT = "<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | {name}:{function} - {message}"


def configure_logging(verbose: bool = False) -> None:
    """Send log records to stderr, INFO and up when verbose, WARNING and up otherwise."""
    logger.remove()
    logger.add(sys.stderr, level="INFO" if verbose else "WARNING", format=LOG_FORMAT)
