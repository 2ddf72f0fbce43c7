"""James-Stein shrinkage estimators for a Gaussian mean matrix with unknown covariance."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401
