"""Small reverse-mode differentiation engine with the layers the models need."""

from mr2xray.gradcore.tensor import (
    Tensor,
    backward,
    get_default_dtype,
    no_grad,
    precision,
    set_default_dtype,
    tensor,
)
from mr2xray.gradcore.ops import (
    ShapeError,
    abs_diff,
    add,
    bce_with_logits,
    bilinear_resize,
    concat,
    conv2d,
    conv_transpose2d,
    instance_norm,
    l1_diff,
    leaky_relu,
    mean,
    mul,
    relu,
    sub,
    sum,
    tanh,
)
from mr2xray.gradcore.optim import AdamState, ParamStore, StateError, adam_step, count_params
from mr2xray.gradcore.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from mr2xray.gradcore.gradcheck import GradCheckReport, grad_check
