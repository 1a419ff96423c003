"""Desk-scale RGB-Event video recognition.

Temporal-shift CNN branches over both modalities, a global-token
cross-attention bridge, token-to-feature fusion, and a training harness,
all on a from-scratch float64 autodiff engine.
"""

from .tensor import Tensor, Parameter, GradTape, no_grad, backward, grad_check

__all__ = ["Tensor", "Parameter", "GradTape", "no_grad", "backward", "grad_check"]
__version__ = "0.1.0"
