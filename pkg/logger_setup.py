import logging
from logging.handlers import RotatingFileHandler

LOGGER_NAME = "mailbench"


def setup_logging(logfile: str = "mailbench.log", level: int = logging.INFO) -> logging.Logger:
    """Configure and return the `mailbench` logger.

    Records at `level` and above go to a rotating logfile; WARNING and above are also
    printed to stderr. Library modules log through `mailbench.<module>` children and
    inherit these handlers.

    Args:
        logfile: path to the logfile.
        level: logging level for the logger and the file handler.

    Returns:
        Configured logging.Logger instance.
    """
    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(level)

    if not logger.handlers:
        fh = RotatingFileHandler(logfile, maxBytes=5 * 1024 * 1024, backupCount=3, encoding="utf-8")
        fh.setLevel(level)
        fmt = logging.Formatter("%(asctime)s %(levelname)s [%(name)s] %(message)s")
        fh.setFormatter(fmt)
        logger.addHandler(fh)

        # warnings and errors also on the console
        ch = logging.StreamHandler()
        ch.setLevel(logging.WARNING)
        ch.setFormatter(fmt)
        logger.addHandler(ch)
    else:
        for handler in logger.handlers:
            if isinstance(handler, RotatingFileHandler):
                handler.setLevel(level)

    return logger
