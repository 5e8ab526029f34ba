"""Small numpy neural-network substrate for sequential conv/pool/FC stacks."""

from .checkpoint import (
    BadMagicError,
    CheckpointError,
    DimOverflowError,
    TruncatedError,
    VersionError,
    load_checkpoint,
    save_checkpoint,
)
from .network import (
    ForwardCache,
    NetworkParams,
    apply_running_stats,
    backward,
    forward,
    param_shapes,
    predict,
    softmax,
    xavier_init,
)
from .optim import AdamState, EarlyStopping, adam_step
from .spec import (
    DISCRIMINATOR,
    HCD,
    PI,
    REFINER,
    LayerSpec,
    NetworkSpec,
    ShapeError,
    conv,
    discriminator_spec,
    fc,
    hcd_spec,
    pi_spec,
    pool,
    refiner_spec,
    softmax_layer,
)

__all__ = [
    "EarlyStopping",
    "AdamState",
    "BadMagicError",
    "CheckpointError",
    "DimOverflowError",
    "DISCRIMINATOR",
    "ForwardCache",
    "HCD",
    "LayerSpec",
    "NetworkParams",
    "NetworkSpec",
    "PI",
    "REFINER",
    "ShapeError",
    "TruncatedError",
    "VersionError",
    "adam_step",
    "apply_running_stats",
    "backward",
    "conv",
    "discriminator_spec",
    "fc",
    "forward",
    "hcd_spec",
    "load_checkpoint",
    "param_shapes",
    "pi_spec",
    "pool",
    "predict",
    "refiner_spec",
    "save_checkpoint",
    "softmax",
    "softmax_layer",
    "xavier_init",
]
