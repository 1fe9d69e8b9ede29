"""unrain: unpaired single-image deraining with self-supervised guidance losses.

Images are float tensors shaped (H, W, 3) (or (B, H, W, 3) where batching is
supported), channels last, values in [0, 1].
"""

__version__ = "0.1.0"

from .imageops import clamp01, mean_abs_diff, to_luminance
from .background import (
    GaussianScaleConfig,
    background_guidance_loss,
    gaussian_blur,
    gaussian_kernel_1d,
    spatial_gradient,
)
from .streaks import (
    compose_fake_rainy,
    extract_streaks,
    rain_guidance_discriminator_loss,
    rain_guidance_generator_loss,
)
from .luminance import (
    NegativeSampleSet,
    enhance_luminance,
    lum_adv_discriminator_loss,
    lum_adv_generator_loss,
)
from .losses import LossBundle, LossWeights, cycle_loss, total_generator_loss
from .networks import (
    ModelBundle,
    NetworkConfig,
    apply_generator,
    build_discriminator,
    build_generator,
    build_model_bundle,
    init_weights,
)
from .data import (
    PairedSample,
    SyntheticRainSpec,
    UnpairedDataset,
    load_image,
    load_paired_testset,
    random_clean_image,
    sample_unpaired_batch,
    save_image,
    synthesize_rain,
)
from .metrics import EvalReport, evaluate, psnr, ssim
from .train import (
    ConfigError,
    TrainConfig,
    TrainingDiverged,
    load_checkpoint,
    load_derain_generator,
    lr_schedule,
    save_checkpoint,
    setup_training,
    train,
    train_step,
)

__all__ = [
    "clamp01",
    "to_luminance",
    "mean_abs_diff",
    "GaussianScaleConfig",
    "gaussian_kernel_1d",
    "gaussian_blur",
    "spatial_gradient",
    "background_guidance_loss",
    "extract_streaks",
    "compose_fake_rainy",
    "rain_guidance_discriminator_loss",
    "rain_guidance_generator_loss",
    "enhance_luminance",
    "NegativeSampleSet",
    "lum_adv_discriminator_loss",
    "lum_adv_generator_loss",
    "LossWeights",
    "LossBundle",
    "cycle_loss",
    "total_generator_loss",
    "NetworkConfig",
    "ModelBundle",
    "build_generator",
    "build_discriminator",
    "build_model_bundle",
    "init_weights",
    "apply_generator",
    "load_image",
    "save_image",
    "SyntheticRainSpec",
    "synthesize_rain",
    "random_clean_image",
    "UnpairedDataset",
    "sample_unpaired_batch",
    "PairedSample",
    "load_paired_testset",
    "psnr",
    "ssim",
    "evaluate",
    "EvalReport",
    "TrainConfig",
    "ConfigError",
    "TrainingDiverged",
    "lr_schedule",
    "setup_training",
    "train_step",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "load_derain_generator",
]
