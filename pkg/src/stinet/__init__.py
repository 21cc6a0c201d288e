"""stinet: hand-object interaction encoding with global-motion infusion."""

from .autograd import Tensor, cross_entropy_loss, no_grad, softmax_rows
from .gradcheck import finite_diff_check

__all__ = [
    "Tensor",
    "cross_entropy_loss",
    "no_grad",
    "softmax_rows",
    "finite_diff_check",
]

__version__ = "0.1.0"
