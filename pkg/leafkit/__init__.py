from __future__ import division, print_function, absolute_import

from .errors import *
from .config import *
from .dsp import *
from .audioreader import *
from .audiowriter import *
from .frontend import *
from .backend import *
from .checkpoint import *
from .dataset import *
from .augment import *
from .training import *
from .metrics import *
from .analysis import *
from . import tensor

from leafkit.version import version as __version__

__all__ = [s for s in dir() if not s.startswith('_')]
