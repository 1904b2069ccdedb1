"""Character-level language modeling across languages with a quadratic
(Laplace-style) prior over network weights, built from the diagonal
observed Fisher information of the training languages."""

__version__ = "0.1.0"

from .kernels import BACKEND as kernel_backend  # noqa: F401
