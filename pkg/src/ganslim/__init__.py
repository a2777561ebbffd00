"""Joint channel pruning, quantization and distillation of GAN generators,
optimized in one minimax loop, with the accounting and ablation tooling around it."""

from .data import TaskSpec, batch_stream, eval_split, make_task
from .distill import (
    FeatureExtractor,
    distill_loss,
    load_extractor,
    mse_distance,
    perceptual_distance,
    save_extractor,
    train_feature_extractor,
)
from .engine import (
    NumericError,
    RunArtifacts,
    RunConfig,
    Schedule,
    SlimState,
    VARIANT_TAGS,
    lr_gamma,
    lr_weight,
    run,
    run_variant,
    train_step,
    train_teacher,
)
from .metrics import (
    CALIBRATED_CONVENTION,
    CompressionReport,
    FlopsConvention,
    ModelStats,
    bytes_to_mb,
    compression_ratios,
    count_flops,
    frechet_distance,
    model_size,
    proxy_fid,
)
from .models import (
    ArchSpec,
    QuantRuntime,
    SpecNet,
    build_discriminator,
    build_generator,
    builtin_specs,
    export_params,
    forward_quantized,
    load_checkpoint,
    load_params,
    load_teacher,
    save_checkpoint,
    scale_channels,
)
from .objective import (
    LossBreakdown,
    PROB_FLOOR,
    gan_loss_discriminator,
    loss_gamma_fidelity,
    loss_w,
    total_loss_report,
)
from .quantization import (
    QuantConfig,
    QuantizedBlob,
    finalize_weights,
    pack_weights,
    quantize_activation,
    quantize_weight,
    ste_activation_grad,
    ste_weight_grad,
)
from .sparsity import (
    ChannelMask,
    ScaleVector,
    channel_mask,
    extract_subnetwork,
    l1_norm,
    prox_step,
    soft_threshold,
)

__version__ = "0.1.0"
