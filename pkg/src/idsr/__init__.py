"""Identity-preserving face super-resolution trained against a frozen
face-recognition descriptor, with a small numpy autodiff engine."""
from ._kernels import BACKEND
from .tensor import Tape, Tensor, backward, finite_diff_grad

__version__ = "0.1.0"
