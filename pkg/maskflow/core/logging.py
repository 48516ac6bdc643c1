'''
Logging utilities for the maskflow library.

Training and evaluation progress is logged through module-level loggers;
the CLI only adjusts the root level.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
import logging
import os


LOG_LEVEL_ENV_VAR = "MASKFLOW_LOG_LEVEL"

# Third-party loggers that are chatty at INFO/DEBUG
_QUIET_LOGGERS = ("matplotlib", "numba", "PIL")


def setup_logging(level=None, format="%(message)s"):
    '''Sets up basic logging to stdout.

    Note that this method uses `logging.basicConfig`, so it does nothing if
    the root logger already has handlers configured, which lets applications
    that import maskflow configure logging as they like.

    Args:
        level (str|int, optional): the logging level. By default, the
            ``MASKFLOW_LOG_LEVEL`` environment variable is used if set, else
            `logging.INFO`
        format (str): the logging format. The default is `"%(message)s"`
    '''
    if level is None:
        level = os.environ.get(LOG_LEVEL_ENV_VAR, logging.INFO)

    logging.basicConfig(level=level, format=format)
    for name in _QUIET_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)


def set_verbosity(verbose):
    '''Sets the level of the root logger based on a CLI verbosity flag.

    Args:
        verbose (bool): whether to log DEBUG messages
    '''
    logging.getLogger().setLevel(logging.DEBUG if verbose else logging.INFO)
