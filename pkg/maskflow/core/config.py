'''
Configuration layer for the maskflow library.

All experiment settings are expressed as :class:`Config` subclasses, which
serialize to JSON with a ``schema_version`` field and validate themselves on
construction.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
from collections import OrderedDict
import logging
import os

import maskflow.core.utils as mfu


logger = logging.getLogger(__name__)


SCHEMA_VERSION = 1

RUN_DIR_ENV_VAR = "MASKFLOW_RUN_DIR"
DEFAULT_RUN_DIR = os.path.join(os.path.expanduser("~"), ".maskflow", "runs")


def get_run_dir(run_dir=None):
    '''Gets the root directory in which experiment runs are written.

    The following strategy is used to locate the run directory (in order of
    precedence):

        (1) Use the provided ``run_dir``
        (2) Use the ``MASKFLOW_RUN_DIR`` environment variable
        (3) Use ``~/.maskflow/runs``

    Args:
        run_dir (str, optional): an explicit run directory

    Returns:
        the run directory path
    '''
    if run_dir is not None:
        return run_dir

    env_dir = os.environ.get(RUN_DIR_ENV_VAR, None)
    if env_dir:
        return env_dir

    return DEFAULT_RUN_DIR


class Config(mfu.Serializable):
    '''Base class for validated, JSON-serializable configurations.

    Subclasses declare their fields as keyword arguments of ``__init__``,
    implement :func:`validate`, and may list nested config fields in the
    ``_NESTED`` class attribute so that :func:`from_dict` can rebuild them.
    '''

    # Maps field names to the Config subclass used to parse them
    _NESTED = {}

    def validate(self):
        '''Validates the config.

        Raises:
            :class:`ConfigError` if the config is invalid
        '''
        pass

    def replace(self, **kwargs):
        '''Returns a copy of the config with the given fields replaced.

        Args:
            **kwargs: field values to override

        Returns:
            a new instance of the same class
        '''
        d = self.to_dict()
        for key, val in kwargs.items():
            if key not in d:
                raise ConfigError(
                    "%s has no field '%s'" % (type(self).__name__, key))
            d[key] = _recurse_config(val)

        return type(self).from_dict(d)

    def to_dict(self):
        d = OrderedDict()
        d["schema_version"] = SCHEMA_VERSION
        d.update(super(Config, self).to_dict())
        return d

    @classmethod
    def from_dict(cls, d):
        '''Constructs a config from a JSON dictionary.

        Args:
            d (dict): a JSON dictionary

        Returns:
            an instance of the config class

        Raises:
            :class:`ConfigError` if the dictionary is not a valid config
        '''
        d = OrderedDict(d)
        version = d.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(
                "Unsupported %s schema version %s (expected %d)"
                % (cls.__name__, version, SCHEMA_VERSION))

        for name, config_cls in cls._NESTED.items():
            if isinstance(d.get(name, None), dict):
                d[name] = config_cls.from_dict(d[name])

        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError("Invalid %s: %s" % (cls.__name__, e))

    def __eq__(self, other):
        return type(self) is type(other) and self.to_dict() == other.to_dict()

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return "%s(%s)" % (
            type(self).__name__,
            ", ".join("%s=%r" % kv for kv in self._field_items()))

    def _field_items(self):
        return [(k, getattr(self, k)) for k in self._attributes()]


def _recurse_config(val):
    if isinstance(val, Config):
        return val.to_dict()
    return val


def require(condition, message, *args):
    '''Raises a :class:`ConfigError` if the given condition is False.

    Args:
        condition (bool): the condition to check
        message (str): the error message, which may contain %-style
            placeholders
        *args: values for the placeholders
    '''
    if not condition:
        raise ConfigError(message % args if args else message)


class ConfigError(Exception):
    '''Exception raised when an invalid configuration is encountered.'''
    pass


class NumericalError(Exception):
    '''Exception raised when a non-finite value is encountered while training
    or sampling.

    Attributes:
        step (int): the step at which the failure occurred, if known
    '''

    def __init__(self, message, step=None):
        '''Creates a NumericalError instance.

        Args:
            message (str): the error message
            step (int, optional): the step at which the failure occurred
        '''
        if step is not None:
            message = "Step %d: %s" % (step, message)

        super(NumericalError, self).__init__(message)
        self.step = step
