"""Objectives: losses, networks, and the curvature probes they share."""

from ..params import ParamVector
from .base import Objective, RegularizedObjective, PER_EXAMPLE_CAP
from .batchnorm import BatchNormLayer, BatchNormMlpObjective, batchnorm_forward
from .linalg import hvp, operator_norm
from .losses import cross_entropy, label_log_prob, log_softmax, softmax
from .mlp import ACTIVATIONS, ForwardTrace, MlpObjective, MlpSpec, init_weights, mlp_forward
from .synthetic import Quadratic, SinProduct, sin_product_eval

__all__ = [
    "Objective", "RegularizedObjective", "PER_EXAMPLE_CAP",
    "BatchNormLayer", "BatchNormMlpObjective", "batchnorm_forward",
    "hvp", "operator_norm",
    "cross_entropy", "label_log_prob", "log_softmax", "softmax",
    "ACTIVATIONS", "ForwardTrace", "MlpObjective", "MlpSpec",
    "init_weights", "mlp_forward",
    "Quadratic", "SinProduct", "sin_product_eval",
    "loss_and_grad", "per_example_grads",
]


def loss_and_grad(objective: Objective, theta, batch=None):
    """Loss and gradient at theta; the gradient keeps the block layout."""
    loss, grad = objective.loss_and_grad(theta, batch)
    return loss, ParamVector(grad, objective.shapes)


def per_example_grads(objective: Objective, theta, idx=None):
    """Stacked per-example gradients, shape (N, dim)."""
    return objective.per_example_grads(theta, idx)
