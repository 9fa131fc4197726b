"""Minimal tensor/autodiff engine with the layers, losses, optimizers and
schedulers the detection models need. Built on numpy; double precision for
verification, single precision for training."""

from .autograd import Tensor, set_finite_checks  # noqa: F401
from .layers import (  # noqa: F401
    Conv2d,
    LayerNorm,
    Linear,
    MaxPoolWidth2,
    Module,
    MultiHeadSelfAttention,
    TransformerBlock,
)
from .losses import binary_cross_entropy, soft_target_cross_entropy  # noqa: F401
from .optim import (  # noqa: F401
    Adam,
    AdamConfig,
    PlateauTracker,
    SchedulerConfig,
    schedule_lr,
)
from .checkpoint import load_checkpoint, save_checkpoint  # noqa: F401
