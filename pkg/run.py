import logging
import os
import sys

from pythonjsonlogger import jsonlogger

from config import LOG_FILE, LOG_FORMAT, LOG_JSON, LOG_LEVEL


def configure_logging() -> logging.Logger:
    """Root logger: stderr stream plus a file handler, JSON lines when LOG_JSON is set."""
    log_level = LOG_LEVEL.upper()
    logger = logging.getLogger()
    logger.setLevel(log_level)
    # Clear any existing handlers
    if logger.handlers:
        logger.handlers.clear()

    stream_handler = logging.StreamHandler(sys.stderr)
    stream_handler.setLevel(log_level)
    stream_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(stream_handler)

    if LOG_FILE:
        directory = os.path.dirname(LOG_FILE)
        if directory:
            os.makedirs(directory, exist_ok=True)
        file_handler = logging.FileHandler(LOG_FILE)
        file_handler.setLevel(log_level)
        if LOG_JSON:
            file_handler.setFormatter(jsonlogger.JsonFormatter("%(asctime)s %(levelname)s %(name)s %(message)s"))
        else:
            file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(file_handler)
    return logger


if __name__ == "__main__":
    configure_logging()

    from app.cli import main

    sys.exit(main(sys.argv[1:]))
