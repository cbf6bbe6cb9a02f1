from .tensor import (
    Tensor,
    add,
    as_tensor,
    avg_pool3d,
    concat,
    cross_entropy,
    default_dtype,
    div,
    embedding,
    gelu,
    get_default_dtype,
    is_grad_enabled,
    layer_norm,
    linear,
    matmul,
    mean,
    mul,
    no_grad,
    permute,
    reshape,
    softmax,
    sub,
    take_rows,
    tsum,
)
from .optim import Adam, OptimizerState, Parameter, clip_grad_norm, cosine_lr, warmup_steps_for
from .checkpoint import CheckpointEntry, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckResult, check_gradients, numerical_grad, relative_error
