"""Dense-tensor compute core: reverse-mode autodiff, the layer set shared by
the segmentation architectures, losses, and optimizers."""

from .autograd import Parameter, Tensor, grad_enabled, no_grad
from .layers import BatchNorm, Conv2D, he_uniform
from .losses import (
    BCE_CLAMP,
    DeepSupervisionSpec,
    bce_loss,
    deep_supervised_loss,
    soft_dice_loss,
)
from .ops import (
    add,
    batchnorm,
    concat_channels,
    conv2d,
    maxpool2,
    relu,
    sigmoid,
    upsample2,
    weighted_sum,
)
from .optim import AdamState, Optimizer, OptimizerConfig, SgdState, adam_step, sgd_step

__all__ = [
    "Parameter",
    "Tensor",
    "grad_enabled",
    "no_grad",
    "BatchNorm",
    "Conv2D",
    "he_uniform",
    "BCE_CLAMP",
    "DeepSupervisionSpec",
    "bce_loss",
    "deep_supervised_loss",
    "soft_dice_loss",
    "add",
    "batchnorm",
    "concat_channels",
    "conv2d",
    "maxpool2",
    "relu",
    "sigmoid",
    "upsample2",
    "weighted_sum",
    "AdamState",
    "Optimizer",
    "OptimizerConfig",
    "SgdState",
    "adam_step",
    "sgd_step",
]
