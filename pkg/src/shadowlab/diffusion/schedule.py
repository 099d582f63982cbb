"""Forward-diffusion noise schedule and latent encoding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import Tensor, as_tensor


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise rates beta and their running products alpha_bar."""

    beta: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        abar = np.asarray(self.alpha_bar, dtype=np.float64)
        if beta.ndim != 1 or beta.shape != abar.shape:
            raise ValueError(f"schedule arrays must be 1-D and equal length, got {beta.shape}, {abar.shape}")
        if beta.size == 0:
            raise ValueError("schedule must have at least one step")
        if beta.min() <= 0.0 or beta.max() >= 1.0:
            raise ValueError("beta values must lie in (0, 1)")
        if (np.diff(beta) < 0.0).any():
            raise ValueError("beta must be non-decreasing")
        if (np.diff(abar) >= 0.0).any():
            raise ValueError("alpha_bar must be strictly decreasing")
        if abar.min() <= 0.0 or abar.max() >= 1.0:
            raise ValueError("alpha_bar values must lie in (0, 1)")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha_bar", abar)

    @property
    def T(self) -> int:
        return self.beta.size


def linear_schedule(T: int = 200, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    beta = np.linspace(beta_min, beta_max, T)
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(beta=beta, alpha_bar=alpha_bar)


def forward_diffuse(z0, t: int, eps, sched: NoiseSchedule) -> Tensor:
    """z_t = sqrt(alpha_bar[t]) * z0 + sqrt(1 - alpha_bar[t]) * eps."""
    z0 = as_tensor(z0)
    eps = as_tensor(eps)
    if z0.shape != eps.shape:
        raise ValueError(f"z0 and eps shapes differ: {z0.shape} vs {eps.shape}")
    if not 0 <= t < sched.T:
        raise ValueError(f"step index {t} out of range [0, {sched.T})")
    a = float(np.sqrt(sched.alpha_bar[t]))
    b = float(np.sqrt(1.0 - sched.alpha_bar[t]))
    return z0 * a + eps * b


def encode_image(pixels: np.ndarray) -> np.ndarray:
    """Map an (H, W, 3) image in [0,1] to a (1, 3, H, W) latent in [-1, 1]."""
    return (2.0 * pixels - 1.0).transpose(2, 0, 1)[None]


def decode_latent(z: np.ndarray) -> np.ndarray:
    """Map a (1, 3, H, W) latent back to an (H, W, 3) image, clamped to [0,1]."""
    return np.clip((z[0].transpose(1, 2, 0) + 1.0) / 2.0, 0.0, 1.0)
