import logging
import sys
import os
from logging.handlers import RotatingFileHandler

from config import LOG_DIR

os.makedirs(LOG_DIR, exist_ok=True)
LOG_FILE = os.path.join(LOG_DIR, "multiplex_sim.log")


def setup_logger(name="multiplex_sim", level=logging.INFO):
    logger = logging.getLogger(name)
    logger.setLevel(level)

    # Prevent adding handlers multiple times
    if logger.hasHandlers():
        return logger

    formatter = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    file_handler = RotatingFileHandler(
        LOG_FILE, maxBytes=10*1024*1024, backupCount=5, encoding="utf-8"
    )
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)

    # modules.* / commands.* 使用 logging.getLogger(__name__)，挂到同一组 handler 上
    for package in ("modules", "commands"):
        package_logger = logging.getLogger(package)
        package_logger.setLevel(level)
        if not package_logger.handlers:
            package_logger.addHandler(console_handler)
            package_logger.addHandler(file_handler)
            package_logger.propagate = False

    return logger


logger = setup_logger()
