'''
Core utilities shared by the maskflow library: JSON I/O, the
:class:`Serializable` base of every config and record, thread pools, tensor
digests and human-readable formatting.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
import hashlib
import json
import logging
import os

import numpy as np
import torch


logger = logging.getLogger(__name__)


# (suffix, size in the previous unit, pluralizable), from nanoseconds up
_TIME_UNITS = (
    ("ns", 1, False),
    ("us", 1000, False),
    ("ms", 1000, False),
    (" second", 1000, True),
    (" minute", 60, True),
    (" hour", 60, True),
    (" day", 24, True),
    (" week", 7, True),
    (" month", 52 / 12, True),
    (" year", 12, True),
)

_DECIMAL_UNITS = ("", "K", "M", "B", "T")


def read_json(path):
    '''Reads JSON from a file, preserving key order.

    Args:
        path (str): the input path

    Returns:
        a JSON list/dictionary

    Raises:
        :class:`SerializationError` if the file cannot be read or parsed
    '''
    try:
        with open(path, "rt") as f:
            return json.load(f, object_pairs_hook=OrderedDict)
    except (OSError, ValueError) as e:
        raise SerializationError(
            "Unable to read JSON from '%s': %s" % (path, e))


def load_json(str_or_bytes):
    '''Loads JSON from a string or bytes, preserving key order.

    Raises:
        :class:`SerializationError` if the input is not valid JSON
    '''
    if isinstance(str_or_bytes, bytes):
        str_or_bytes = str_or_bytes.decode("utf-8")

    try:
        return json.loads(str_or_bytes, object_pairs_hook=OrderedDict)
    except ValueError as e:
        raise SerializationError("Invalid JSON: %s" % e)


def json_to_str(obj):
    '''Renders the object as indented JSON.

    NumPy scalars and arrays and torch tensors are converted to plain Python
    values, so configs and metric reports can hold them directly.

    Args:
        obj: a JSON-compatible object

    Returns:
        the JSON string
    '''
    return json.dumps(obj, indent=4, default=_to_builtin)


def write_json(obj, path):
    '''Writes the object as JSON, creating the output directory if necessary.

    Args:
        obj: a JSON-compatible object
        path (str): the output path
    '''
    write_text(json_to_str(obj), path)


def write_text(text, path):
    '''Writes UTF-8 text, creating the output directory if necessary.

    Args:
        text (str): the text to write
        path (str): the output path
    '''
    ensure_basedir(path)
    with open(path, "wb") as f:
        f.write(text.encode("utf-8"))


def ensure_basedir(path):
    '''Makes the base directory of the given path, if necessary.'''
    ensure_dir(os.path.dirname(path))


def ensure_dir(dirname):
    '''Makes the given directory, if necessary.

    Args:
        dirname (str): a directory path
    '''
    if dirname and not os.path.isdir(dirname):
        logger.debug("Making directory '%s'", dirname)
        os.makedirs(dirname, exist_ok=True)


def thread_map(callback, iterable, max_workers=None):
    '''Applies the callback to each item of the iterable on a pool of worker
    threads.

    Args:
        callback (function): the function to call on each item
        iterable (iterable): the items
        max_workers (int, optional): the number of worker threads. By
            default, the executor's default is used. A value of 1 runs the
            callbacks serially in the calling thread

    Returns:
        a list of the values returned by ``callback``, in input order
    '''
    if max_workers == 1:
        return [callback(item) for item in iterable]

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        return list(executor.map(callback, iterable))


def hash_tensors(named_tensors):
    '''Computes a SHA-1 digest of named tensors, independent of their order.

    Args:
        named_tensors (iterable): ``(name, tensor)`` pairs

    Returns:
        the hex digest string
    '''
    digest = hashlib.sha1()
    for name, tensor in sorted(named_tensors, key=lambda kv: kv[0]):
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())

    return digest.hexdigest()


def to_human_time_str(num_seconds, decimals=1):
    '''Renders a duration in seconds as a human-readable string.

    Examples:
        0.001 => "1ms"
        60 => "1 minute"
        65 => "1.1 minutes"
        5400 => "1.5 hours"

    Args:
        num_seconds (float): the duration
        decimals (int, optional): the maximum number of decimals to show

    Returns:
        a string like "1.5 minutes"
    '''
    if num_seconds == 0:
        return "0 seconds"

    num = 1e9 * num_seconds
    suffix, plural = _TIME_UNITS[0][0], _TIME_UNITS[0][2]
    for next_suffix, size, next_plural in _TIME_UNITS[1:]:
        if abs(num) < size:
            break
        num /= size
        suffix, plural = next_suffix, next_plural

    num_str = _trim_decimals(num, decimals)
    if plural and num_str != "1":
        return num_str + suffix + "s"

    return num_str + suffix


def to_human_decimal_str(num, decimals=1):
    '''Renders a count with a K/M/B/T suffix, e.g. parameter counts.

    Examples:
        65 => "65"
        123456 => "123.5K"
        329769041 => "329.8M"
    '''
    suffix = _DECIMAL_UNITS[0]
    for next_suffix in _DECIMAL_UNITS[1:]:
        if abs(num) < 1000:
            break
        num /= 1000
        suffix = next_suffix

    return _trim_decimals(num, decimals) + suffix


class Serializable(object):
    '''Base class for objects that can be represented in JSON format.

    Subclasses implement :meth:`from_dict`, and may override
    :meth:`_attributes` to control which fields are written and in what
    order.
    '''

    def __str__(self):
        return self.to_str()

    def to_dict(self):
        '''Returns an ordered JSON dictionary representation of the object.'''
        return OrderedDict(
            (v, _recurse(getattr(self, k)))
            for k, v in self._attributes().items())

    def to_str(self):
        '''Returns the JSON string representation of the object.'''
        return json_to_str(self.to_dict())

    def to_json(self, path):
        '''Writes the object to disk in JSON format.

        Args:
            path (str): the output JSON file path. The base output directory
                is created, if necessary
        '''
        write_json(self.to_dict(), path)

    @classmethod
    def from_dict(cls, d):
        '''Constructs an instance from its JSON dictionary representation.
        Subclasses must implement this method.

        Args:
            d (dict): a JSON dictionary

        Returns:
            an instance of the subclass
        '''
        raise NotImplementedError("subclass must implement from_dict()")

    @classmethod
    def from_str(cls, s):
        '''Constructs an instance from its JSON string representation.'''
        return cls.from_dict(load_json(s))

    @classmethod
    def from_json(cls, path):
        '''Constructs an instance from a JSON file.

        Args:
            path (str): the path to a JSON file

        Returns:
            an instance of the subclass

        Raises:
            :class:`SerializationError` if the file cannot be read
        '''
        return cls.from_dict(read_json(path))

    def _attributes(self):
        '''Returns an ordered dictionary mapping attribute names to the field
        names under which they are serialized. By default, every public
        attribute of ``vars(self)``.
        '''
        return OrderedDict((a, a) for a in vars(self) if not a.startswith("_"))


def _recurse(v):
    if isinstance(v, Serializable):
        return v.to_dict()
    if isinstance(v, (list, tuple)):
        return [_recurse(vi) for vi in v]
    if isinstance(v, dict):
        return OrderedDict((ki, _recurse(vi)) for ki, vi in v.items())
    return v


def _to_builtin(obj):
    if isinstance(obj, torch.Tensor):
        return obj.detach().cpu().tolist()
    if isinstance(obj, (np.ndarray, np.generic)):
        return obj.tolist()
    raise TypeError(
        "Object of type %s is not JSON serializable" % type(obj).__name__)


def _trim_decimals(num, decimals):
    # Drop trailing zeros, so 1.0 renders as "1"
    return ("%.*f" % (decimals, num)).rstrip("0").rstrip(".")


class SerializationError(Exception):
    '''Exception raised when JSON cannot be read or parsed.'''
    pass
