from .schedule import NoiseSchedule, decode_latent, encode_image, forward_diffuse, linear_schedule
from .losses import (
    ModulationParams,
    WeightMap,
    bce_loss,
    build_weight_map,
    combined_loss,
    dice_loss,
    mask_loss,
    modulate_noise,
    modulated_noise_loss,
    noise_loss,
    weight_map_from_mask,
    weighted_noise_loss,
)
from .networks import ControlEncoder, Denoiser, DenoiserConfig, IntensityEncoder, MaskHead
from .model import (
    ConditioningInput,
    LossRecord,
    SampleResult,
    ShadowDiffusionModel,
    TrainingDivergedError,
    write_loss_log,
)

__all__ = [
    "NoiseSchedule", "decode_latent", "encode_image", "forward_diffuse", "linear_schedule",
    "ModulationParams", "WeightMap", "bce_loss", "build_weight_map", "combined_loss",
    "dice_loss", "mask_loss", "modulate_noise", "modulated_noise_loss", "noise_loss",
    "weight_map_from_mask", "weighted_noise_loss",
    "ControlEncoder", "Denoiser", "DenoiserConfig", "IntensityEncoder", "MaskHead",
    "ConditioningInput", "LossRecord", "SampleResult", "ShadowDiffusionModel",
    "TrainingDivergedError", "write_loss_log",
]
