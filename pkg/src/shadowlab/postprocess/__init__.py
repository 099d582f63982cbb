from .lut import (
    DEFAULT_LATTICE,
    DEFAULT_SMOOTHNESS,
    LUT3D,
    LUTError,
    apply_lut,
    color_residual,
    fit_lut,
    identity_lut,
    lut_from_text,
    lut_to_text,
    perturb_ground_truth,
    random_color_lut,
)
from .model import PostProcessor, PostSample, final_blend, make_post_samples
from .network import PostNet, PostNetConfig

__all__ = [
    "DEFAULT_LATTICE",
    "DEFAULT_SMOOTHNESS",
    "LUT3D",
    "LUTError",
    "apply_lut",
    "color_residual",
    "fit_lut",
    "identity_lut",
    "lut_from_text",
    "lut_to_text",
    "perturb_ground_truth",
    "random_color_lut",
    "PostProcessor",
    "PostSample",
    "final_blend",
    "make_post_samples",
    "PostNet",
    "PostNetConfig",
]
