#!/usr/bin/env python
'''
Installs the maskflow package.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
from setuptools import setup, find_packages


setup(
    name="maskflow",
    version="0.1.0",
    description="Masked-condition flow matching for speech spectrograms",
    author="Voxel51, Inc.",
    contact="info@voxel51.com",
    url="https://github.com/voxel51/maskflow",
    license="BSD-4-Clause",
    packages=find_packages(exclude=["tests"]),
    include_package_data=True,
    classifiers=[
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
    ],
    scripts=["maskflow/cli/maskflow"],
    install_requires=[
        "argcomplete",
        "einops",
        "librosa>=0.10",
        "matplotlib",
        "numpy",
        "peft>=0.7",
        "pystoi",
        "python-dateutil>=2.7.0",
        "scipy",
        "soundfile",
        "tabulate",
        "torch>=2.0",
        "torchdiffeq",
        "tzlocal",
    ],
    extras_require={
        "dev": [
            "pycodestyle",
            "pylint",
            "pytest",
        ]
    },
    python_requires=">=3.9",
)
