"""Full-resolution retinal vessel segmentation networks on a from-scratch
numpy autodiff engine."""

import ctypes as _ctypes

# Large activation buffers (tens of MB) churn through glibc's mmap path by
# default, paying a page-fault storm on every op. Raising the mmap and trim
# thresholds keeps them on the reusable heap; roughly halves forward latency.
try:
    _libc = _ctypes.CDLL("libc.so.6")
    _libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
    _libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
except OSError:  # non-glibc platform; purely a performance tweak
    pass

__version__ = "0.1.0"

from .autodiff import (  # noqa: E402
    ConvSpec,
    Tensor,
    batch_norm,
    channel_norm,
    conv2d,
    depthwise_conv2d,
    gelu,
    grad_check,
    no_grad,
    relu,
    sigmoid,
)
from .errors import (  # noqa: E402
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    FRNetError,
    GradCheckError,
    ManifestError,
    TrainError,
)

from .blocks import (  # noqa: E402
    BatchNorm2d,
    BlockConfig,
    ChannelNorm,
    Conv2d,
    ConvNeXtBlock,
    DepthwiseConv2d,
    Module,
    ModuleList,
    RecurrentConv,
    ResidualBlock,
    build_block,
    param_count,
)
from .models import (  # noqa: E402
    FRNet,
    ModelConfig,
    UNet,
    build_model,
    build_unet_baseline,
    load_checkpoint,
    save_checkpoint,
)
from .training import (  # noqa: E402
    Adam,
    MetricsRecord,
    TrainConfig,
    accuracy,
    adam_step,
    dice_loss,
    dice_score,
    evaluate,
    train,
    write_history,
)
from .data import (  # noqa: E402
    Sample,
    SplitSpec,
    crop_batch,
    load_dataset,
    load_samples,
    octa500_split,
    rossa_split,
    synth_vessels,
    write_png,
)
from .bench import BenchReport, bench_inference, report_tables  # noqa: E402
from .cli import cli  # noqa: E402

__all__ = [
    "BatchNorm2d",
    "BenchReport",
    "BlockConfig",
    "ChannelNorm",
    "Conv2d",
    "ConvNeXtBlock",
    "Adam",
    "ConvSpec",
    "DepthwiseConv2d",
    "FRNet",
    "MetricsRecord",
    "ModelConfig",
    "Module",
    "ModuleList",
    "RecurrentConv",
    "ResidualBlock",
    "Sample",
    "SplitSpec",
    "Tensor",
    "TrainConfig",
    "UNet",
    "accuracy",
    "adam_step",
    "bench_inference",
    "build_block",
    "build_model",
    "build_unet_baseline",
    "cli",
    "crop_batch",
    "dice_loss",
    "dice_score",
    "evaluate",
    "load_checkpoint",
    "load_dataset",
    "load_samples",
    "octa500_split",
    "param_count",
    "report_tables",
    "rossa_split",
    "save_checkpoint",
    "synth_vessels",
    "train",
    "write_history",
    "write_png",
    "batch_norm",
    "channel_norm",
    "conv2d",
    "depthwise_conv2d",
    "gelu",
    "grad_check",
    "no_grad",
    "relu",
    "sigmoid",
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DataError",
    "DimensionError",
    "FRNetError",
    "GradCheckError",
    "ManifestError",
    "TrainError",
    "__version__",
]
