"""
Logging configuration for the MRvF toolkit
Provides structured logging with file rotation and different log levels
"""
import logging
import os
from logging.handlers import RotatingFileHandler

PACKAGE_LOGGER = 'mrvf'
SIM_LOGGER = 'mrvf.sim'

_DETAILED_FORMAT = '[%(asctime)s] %(levelname)s in %(module)s.%(funcName)s:%(lineno)d - %(message)s'
_SIMPLE_FORMAT = '[%(asctime)s] %(levelname)s - %(message)s'
_DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


def setup_logging(config, quiet=False):
    """
    Configure package logging with file rotation

    Creates two log files in config.LOG_DIR:
    - app.log: General pipeline logs
    - error.log: Error and critical logs only
    plus a console handler (WARNING and above when quiet)
    """
    logs_dir = config.LOG_DIR
    os.makedirs(logs_dir, exist_ok=True)

    logger = logging.getLogger(PACKAGE_LOGGER)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    logger.setLevel(logging.DEBUG if config.DEBUG else getattr(logging, config.LOG_LEVEL, logging.INFO))
    logger.propagate = False

    detailed_formatter = logging.Formatter(_DETAILED_FORMAT, datefmt=_DATE_FORMAT)
    simple_formatter = logging.Formatter(_SIMPLE_FORMAT, datefmt=_DATE_FORMAT)

    # 1. Application log handler (rotating, max 10MB, keep 5 backups)
    app_handler = RotatingFileHandler(
        os.path.join(logs_dir, 'app.log'),
        maxBytes=10 * 1024 * 1024,
        backupCount=5
    )
    app_handler.setLevel(logging.INFO)
    app_handler.setFormatter(detailed_formatter)
    logger.addHandler(app_handler)

    # 2. Error log handler (only errors and critical)
    error_handler = RotatingFileHandler(
        os.path.join(logs_dir, 'error.log'),
        maxBytes=10 * 1024 * 1024,
        backupCount=5
    )
    error_handler.setLevel(logging.ERROR)
    error_handler.setFormatter(detailed_formatter)
    logger.addHandler(error_handler)

    # 3. Console handler
    console_handler = logging.StreamHandler()
    if quiet:
        console_handler.setLevel(logging.WARNING)
    else:
        console_handler.setLevel(logging.DEBUG if config.DEBUG else logging.INFO)
    console_handler.setFormatter(simple_formatter)
    logger.addHandler(console_handler)

    logger.debug(f'Log directory: {os.path.abspath(logs_dir)}')
    return logger


def get_sim_logger(log_dir=None):
    """
    Get dedicated logger for simulation and training progress
    Useful for tracking per-entry builds and EM iterations
    """
    sim_logger = logging.getLogger(SIM_LOGGER)

    if log_dir and not any(isinstance(h, RotatingFileHandler) for h in sim_logger.handlers):
        sim_logger.setLevel(logging.DEBUG)
        sim_logger.propagate = False
        os.makedirs(log_dir, exist_ok=True)

        sim_handler = RotatingFileHandler(
            os.path.join(log_dir, 'sim.log'),
            maxBytes=10 * 1024 * 1024,
            backupCount=3
        )
        sim_handler.setLevel(logging.DEBUG)
        sim_handler.setFormatter(logging.Formatter(
            '[%(asctime)s] SIM - %(levelname)s - %(message)s',
            datefmt=_DATE_FORMAT
        ))
        sim_logger.addHandler(sim_handler)

    return sim_logger


def log_error(logger, error, context=None):
    """
    Helper function to log errors with context

    Args:
        logger: Logger instance
        error: Exception object
        context: Optional dict with additional context
    """
    error_msg = f'Error: {type(error).__name__}: {str(error)}'

    if context:
        error_msg += f' | Context: {context}'

    logger.error(error_msg, exc_info=True)


def log_simulation(logger, index, so2, t2, seconds):
    """
    Log one dictionary entry simulation

    Args:
        logger: Simulation logger
        index: Global entry index
        so2: Blood oxygen saturation of the entry
        t2: T2 of the entry (ms)
        seconds: Wall time of the pre+post simulation
    """
    logger.debug(
        f'Entry #{index} | SO2: {so2:.4f} | T2: {t2:.2f} ms | '
        f'Wall: {seconds:.2f} s'
    )


def log_training_iteration(logger, iteration, log_likelihood, k):
    """
    Log one EM iteration

    Args:
        logger: Simulation logger
        iteration: Iteration number (1-based)
        log_likelihood: Total log-likelihood after the E-step
        k: Active component count
    """
    logger.debug(
        f'EM iteration {iteration} | log-likelihood: {log_likelihood:.6f} | k: {k}'
    )
