"""Training-free dual-branch dense inference for open-vocabulary segmentation.

A frozen vision-language encoder is run twice per image: once with token
reliability gating (the outlier-gated branch) and once with the final
attention aggregation replaced by a proxy affinity built from external
vision-foundation-model features (the proxy branch).  Branch logits are
fused linearly, a global class-token prior may be added, queries collapse to
classes, and instance masks optionally smooth the pixel-level class logits
before the argmax.  Everything runs on exported tensors; no model framework
is required at inference time.
"""

from .errors import (
    BadMagicError,
    ConfigError,
    DegenerateInputError,
    DoucError,
    ManifestError,
    NumericError,
    PayloadMismatchError,
    PipelineError,
    ShapeError,
    TensorFileError,
    UnsupportedDtypeError,
)
from .fusion import (
    FusionConfig,
    TextBank,
    add_cls_prior,
    align_and_fuse,
    cls_prior_logits,
    collapse_queries,
    instance_post_correct,
    predict,
    upsample_logits,
)
from .gating import (
    GateConfig,
    GateReport,
    apply_gate,
    default_gate_layers,
    gate_weights,
    make_gate_hooks,
    og_dense_logits,
    reliability_scores,
)
from .manifest import Manifest, load_manifest
from .metrics import ConfusionMatrix, compare_report, summarize
from .pipeline import (
    ModelAssets,
    PipelineResult,
    compare_to_golden,
    load_image_inputs,
    load_model_assets,
    run_image,
    write_intermediates,
)
from .proxy import (
    InstanceMaskSet,
    ProxyConfig,
    build_affinity,
    build_proxy_affinity,
    fade_dense_logits,
    mask_affinity,
    normalize_affinity,
    reconstruct_values,
    resample_values,
)
from .synthetic import build_synthetic_export
from .tensor_ops import (
    bilinear_resize,
    l2_normalize_rows,
    layer_norm,
    matmul,
    row_softmax,
)
from .tensorfile import read_tensor, read_tensor_shape, write_tensor
from .vit import (
    BlockWeights,
    LayerHook,
    TokenSequence,
    block_forward,
    forward,
    project_to_joint_space,
    self_attention,
)

__version__ = "0.1.0"
