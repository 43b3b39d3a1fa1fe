"""
Utility functions for vicsek-kinetics
"""
import hashlib
import logging
import math
import platform
from logging.handlers import RotatingFileHandler
from typing import Iterable

import config


def setup_logger(name: str) -> logging.Logger:
    """Set up a logger with a rotating file handler"""
    logger = logging.getLogger(name)

    if logger.handlers:
        # Logger already configured
        return logger

    logger.setLevel(getattr(logging, config.LOG_LEVEL))

    formatter = logging.Formatter(config.LOG_FORMAT)

    # File handler with rotation
    file_handler = RotatingFileHandler(
        config.LOG_FILE,
        maxBytes=config.LOG_MAX_SIZE,
        backupCount=config.LOG_BACKUP_COUNT
    )
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)

    return logger


def enable_console_logging(level: str = "INFO"):
    """Mirror every project logger to stderr (used by the CLI --verbose flag)"""
    root = logging.getLogger("src")
    if any(isinstance(h, logging.StreamHandler) and not isinstance(h, RotatingFileHandler)
           for h in root.handlers):
        return
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(config.LOG_FORMAT))
    handler.setLevel(getattr(logging, level))
    root.addHandler(handler)
    root.setLevel(getattr(logging, level))


def format_size(size_bytes: int) -> str:
    """Format byte size in human readable format"""
    if size_bytes == 0:
        return "0 B"

    size_names = ["B", "KB", "MB", "GB", "TB"]
    i = int(math.floor(math.log(size_bytes, 1024)))
    p = math.pow(1024, i)
    s = round(size_bytes / p, 2)

    return f"{s} {size_names[i]}"


def content_hash(parts: Iterable[bytes]) -> str:
    """sha256 over the concatenated input blobs, hex encoded"""
    digest = hashlib.sha256()
    for part in parts:
        digest.update(len(part).to_bytes(8, "little"))
        digest.update(part)
    return digest.hexdigest()


def get_system_info() -> dict:
    """Get basic host information for run provenance"""
    try:
        import psutil
        import numpy
        import scipy
        return {
            'platform': platform.system(),
            'platform_version': platform.version(),
            'architecture': platform.architecture()[0],
            'processor': platform.processor(),
            'python': platform.python_version(),
            'numpy': numpy.__version__,
            'scipy': scipy.__version__,
            'cpu_count': psutil.cpu_count(),
            'memory_total': psutil.virtual_memory().total,
            'memory_available': psutil.virtual_memory().available,
        }
    except Exception as e:
        return {'error': str(e)}
