"""Training objectives: weighted noise losses, mask losses, and modulation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..imaging import BinaryMask, dilate, resize
from ..numerics import Tensor, ShapeError, as_tensor, clip, log, tmean, tsum


@dataclass(frozen=True)
class WeightMap:
    """Per-pixel loss weights: w inside the expanded shadow region, 1 elsewhere."""

    values: np.ndarray = field(repr=False)
    w: float = 1.0

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"WeightMap needs an (H, W) buffer, got {arr.shape}")
        if not np.isin(arr, (1.0, self.w)).all():
            raise ValueError(f"WeightMap values must be 1 or {self.w}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True)
class ModulationParams:
    """Channelwise scale and bias vectors applied to the predicted noise map."""

    s: Tensor
    b: Tensor

    def __post_init__(self):
        s, b = as_tensor(self.s), as_tensor(self.b)
        if s.shape != b.shape:
            raise ShapeError(f"scale and bias shapes differ: {s.shape} vs {b.shape}")
        if not (np.isfinite(s.data).all() and np.isfinite(b.data).all()):
            raise ValueError("modulation parameters must be finite")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "b", b)


def build_weight_map(fg_shadow: BinaryMask, radius: int, w: float,
                     model_size: int | None = None) -> WeightMap:
    """Dilate the shadow mask and weight it w against 1 for the background."""
    if w < 1.0:
        raise ValueError(f"weight w must be >= 1, got {w}")
    expanded = dilate(fg_shadow, radius)
    if model_size is not None and (expanded.height, expanded.width) != (model_size, model_size):
        expanded = resize(expanded, model_size, model_size)
    values = np.where(expanded.values == 1.0, w, 1.0)
    return WeightMap(values=values, w=w)


def weight_map_from_mask(fg_shadow: BinaryMask, w: float,
                         model_size: int | None = None) -> WeightMap:
    """Weight map without expansion (the radius-0 ablation)."""
    if w < 1.0:
        raise ValueError(f"weight w must be >= 1, got {w}")
    mask = fg_shadow
    if model_size is not None and (mask.height, mask.width) != (model_size, model_size):
        mask = resize(mask, model_size, model_size)
    values = np.where(mask.values == 1.0, w, 1.0)
    return WeightMap(values=values, w=w)


def _pair(eps, eps_pred) -> tuple[Tensor, Tensor]:
    eps, eps_pred = as_tensor(eps), as_tensor(eps_pred)
    if eps.shape != eps_pred.shape:
        raise ShapeError(f"noise maps must share a shape, got {eps.shape} vs {eps_pred.shape}")
    return eps, eps_pred


def _weight_tensor(weights, like: Tensor) -> Tensor:
    if isinstance(weights, WeightMap):
        weights = weights.values
    wt = as_tensor(weights)
    if wt.ndim == 2:
        if like.ndim == 4:
            wt = wt.reshape((1, 1) + wt.shape)
        elif like.ndim == 3:
            wt = wt.reshape((1,) + wt.shape)
    try:
        np.broadcast_shapes(wt.shape, like.shape)
    except ValueError as exc:
        raise ShapeError(f"weight map {wt.shape} not broadcastable to {like.shape}") from exc
    return wt


def noise_loss(eps, eps_pred) -> Tensor:
    """Mean squared error between true and predicted noise."""
    eps, eps_pred = _pair(eps, eps_pred)
    diff = eps - eps_pred
    return tmean(diff * diff)


def weighted_noise_loss(eps, eps_pred, weights) -> Tensor:
    """Mean over elements of (W * (eps - eps_pred))^2."""
    eps, eps_pred = _pair(eps, eps_pred)
    wt = _weight_tensor(weights, eps)
    scaled = wt * (eps - eps_pred)
    return tmean(scaled * scaled)


def dice_loss(pred, gt, smooth: float = 1.0) -> Tensor:
    """1 - (2*sum(pred*gt) + smooth) / (sum(pred) + sum(gt) + smooth)."""
    pred, gt = as_tensor(pred), as_tensor(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"dice_loss shapes differ: {pred.shape} vs {gt.shape}")
    for name, t in (("pred", pred), ("gt", gt)):
        if t.data.min() < 0.0 or t.data.max() > 1.0:
            raise ValueError(f"dice_loss {name} values must lie in [0,1]")
    inter = tsum(pred * gt)
    total = tsum(pred) + tsum(gt)
    return 1.0 - (2.0 * inter + smooth) / (total + smooth)


def bce_loss(pred, gt) -> Tensor:
    """Mean binary cross-entropy; pred clamped to [1e-7, 1-1e-7] for stability."""
    pred, gt = as_tensor(pred), as_tensor(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"bce_loss shapes differ: {pred.shape} vs {gt.shape}")
    p = clip(pred, 1e-7, 1.0 - 1e-7)
    return -tmean(gt * log(p) + (1.0 - gt) * log(1.0 - p))


def mask_loss(pred, gt) -> Tensor:
    """BCE plus Dice on the predicted soft shadow mask."""
    return bce_loss(pred, gt) + dice_loss(pred, gt)


def modulate_noise(eps_tilde, params: ModulationParams, mask) -> Tensor:
    """Blend the channelwise-affine-modulated noise map back through the mask.

    Computed as eps_tilde + ((s - 1) * eps_tilde + b) * mask, which is exactly
    (s*eps_tilde + b) * mask + eps_tilde * (1 - mask) but returns eps_tilde
    bitwise under identity modulation or an all-zero mask.
    """
    eps_tilde = as_tensor(eps_tilde)
    mask_t = _weight_tensor(mask.values if isinstance(mask, BinaryMask) else mask, eps_tilde)
    if eps_tilde.ndim != 4:
        raise ShapeError(f"modulate_noise expects (N, C, H, W) noise, got {eps_tilde.shape}")
    channels = eps_tilde.shape[1]
    s, b = params.s, params.b
    if s.ndim == 1:
        if s.shape[0] != channels:
            raise ShapeError(f"modulation has {s.shape[0]} channels, noise has {channels}")
        s = s.reshape((1, channels, 1, 1))
        b = b.reshape((1, channels, 1, 1))
    elif s.ndim == 2:
        if s.shape[1] != channels:
            raise ShapeError(f"modulation has {s.shape[1]} channels, noise has {channels}")
        s = s.reshape(s.shape + (1, 1))
        b = b.reshape(b.shape + (1, 1))
    else:
        raise ShapeError(f"modulation params must be (C,) or (N, C), got {s.shape}")
    delta = (s - 1.0) * eps_tilde + b
    return eps_tilde + delta * mask_t


def modulated_noise_loss(eps, eps_hat, weights) -> Tensor:
    """Same contract as weighted_noise_loss, applied to the blended noise map."""
    return weighted_noise_loss(eps, eps_hat, weights)


def combined_loss(mask_term: Tensor | None, noise_term: Tensor, lam: float) -> Tensor:
    """L_all = L_mask + lambda * L_mwsg, with the mask term absent when gated off."""
    if lam < 0.0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    if mask_term is None:
        return lam * noise_term
    return mask_term + lam * noise_term
