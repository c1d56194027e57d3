"""Critical points of random spherical harmonics: Legendre asymptotics,
two-point Kac-Rice kernels, the Gaussian moment constants behind the
variance law, and a Monte Carlo field simulator to check them against.
"""

from . import covariance, gaussmoments, kacrice, legendre
from . import field
from ._accel import backend, set_backend, use_backend
from .errors import *  # noqa: F401,F403
from .field import HarmonicField, find_critical, sample, simulate
from .gaussmoments import expected_count, variance_law
from .kacrice import McConfig, QuadConfig, k2, q_of_a, variance_integral

__version__ = "0.1.0"
