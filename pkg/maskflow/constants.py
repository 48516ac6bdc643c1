'''
Package-wide constants.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
from importlib.metadata import metadata, PackageNotFoundError


try:
    _META = metadata("maskflow")
    NAME = _META["name"]
    VERSION = _META["version"]
    DESCRIPTION = _META["summary"]
    AUTHOR = _META["author"]
except PackageNotFoundError:
    # Running from a source checkout that has not been installed
    NAME = "maskflow"
    VERSION = "0.0.0"
    DESCRIPTION = "Masked-condition flow matching for speech spectrograms"
    AUTHOR = "Voxel51, Inc."

VERSION_LONG = "%s v%s, %s" % (NAME, VERSION, AUTHOR)

# Audio front-end
SAMPLE_RATE = 16000
HOP_LENGTH = 160  # 10ms
WINDOW_LENGTH = 640  # 40ms
FFT_SIZE = 1024
N_MELS = 80
FRAME_RATE = SAMPLE_RATE // HOP_LENGTH
LOG_FLOOR_EPS = 1e-5
