from .config import Config, DefaultConfig  # noqa: F401
from .cost import CostSpec, HorizonSpec, RandomizedHorizonConfig  # noqa: F401
from .errors import KLSensError  # noqa: F401
from .expansion import DerivativeReport, derive, derive_exact, sweep  # noqa: F401
from .model import FiniteDistribution, StochasticModel  # noqa: F401

try:
    from ._version import __version__
except ImportError:
    __version__ = "unknown"
