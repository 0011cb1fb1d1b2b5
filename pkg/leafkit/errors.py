# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
# All rights reserved.
#
# Redistribution and use in source and binary forms, with or without
# modification, are permitted under the terms of the BSD 3-clause license
# distributed with this package.
"""Exception types shared by all leafkit modules.

Each class stores the offending value in ``parameter`` and carries the
exit code the command line reports for it.
"""

__all__ = ['LeafkitError', 'DataError', 'NumericError', 'LabelMismatch',
           'InputError', 'ManifestError', 'ConfigError', 'CheckpointError',
           'ModeError', 'ShapeMismatch', 'SampleRateError']


class LeafkitError(Exception):
    exit_code = 1

    def __init__(self, value):
        self.parameter = value

    def __str__(self):
        if isinstance(self.parameter, str):
            return self.parameter
        return repr(self.parameter)


class DataError(LeafkitError):
    exit_code = 2


class NumericError(LeafkitError, FloatingPointError):
    exit_code = 3


class LabelMismatch(LeafkitError):
    exit_code = 4


class InputError(LeafkitError):
    exit_code = 5


class ManifestError(InputError):
    pass


class ConfigError(InputError):
    pass


class CheckpointError(InputError):
    pass


class ModeError(LeafkitError, ValueError):
    exit_code = 6


class ShapeMismatch(LeafkitError, ValueError):
    exit_code = 5


class SampleRateError(LeafkitError, ValueError):
    exit_code = 2
