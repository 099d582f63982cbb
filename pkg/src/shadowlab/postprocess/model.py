"""Rectification training and the final mask-gated blend."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..base import ParamsMixin
from ..diffusion.model import TrainingDivergedError
from ..diffusion.losses import mask_loss
from ..imaging import BinaryMask, ImageRGB, blend_soft
from ..numerics.checkpoint import load_checkpoint, save_checkpoint
from ..numerics.optim import Adam
from ..numerics.tensor import Tensor, backward, no_grad, tmean
from .lut import LUT3D, apply_lut, random_color_lut
from .network import PostNet, PostNetConfig


@dataclass(frozen=True)
class PostSample:
    """One supervision tuple for the rectifier.

    perturbed plays the role of a color-shifted generation; target is the
    clean ground truth and fg_shadow supervises the mask decoder.
    """

    perturbed: ImageRGB
    composite: ImageRGB
    fg_object: BinaryMask
    target: ImageRGB
    fg_shadow: BinaryMask

    def __post_init__(self):
        shape = self.target.pixels.shape[:2]
        for name in ("perturbed", "composite"):
            if getattr(self, name).pixels.shape[:2] != shape:
                raise ValueError(f"{name} does not match target dimensions {shape}")
        for name in ("fg_object", "fg_shadow"):
            if getattr(self, name).values.shape != shape:
                raise ValueError(f"{name} does not match target dimensions {shape}")


def make_post_samples(tuples, seed: int, luts_per_tuple: int = 2) -> list:
    """Color-perturb ground truths with random monotone LUTs.

    Stands in for real generated results so the rectifier trains without a
    diffusion checkpoint; each tuple yields luts_per_tuple samples.
    """
    rng = np.random.default_rng(seed)
    samples = []
    for t in tuples:
        for _ in range(luts_per_tuple):
            lut = random_color_lut(rng)
            samples.append(PostSample(
                perturbed=apply_lut(lut, t.target),
                composite=t.composite,
                fg_object=t.fg_object,
                target=t.target,
                fg_shadow=t.fg_shadow,
            ))
    return samples


def _stack(samples) -> dict:
    perturbed = np.stack([s.perturbed.pixels.transpose(2, 0, 1) for s in samples])
    composite = np.stack([s.composite.pixels.transpose(2, 0, 1) for s in samples])
    fg_object = np.stack([s.fg_object.values[None] for s in samples])
    target = np.stack([s.target.pixels.transpose(2, 0, 1) for s in samples])
    fg_shadow = np.stack([s.fg_shadow.values[None] for s in samples])
    return {
        "x": np.concatenate([perturbed, composite, fg_object], axis=1),
        "target": target,
        "fg_shadow": fg_shadow,
    }


@dataclass
class PostLossRecord:
    step: int
    loss_img: float
    loss_mask: float
    loss_total: float


class PostProcessor(ParamsMixin):
    """Estimator wrapper around PostNet: fit on perturbed/clean pairs, then
    rectify generated images and predict the shadow matte."""

    def __init__(self, widths=(16, 24, 32, 48), lr: float = 1e-3, steps: int = 800,
                 batch: int = 4, seed: int = 0):
        self.widths = tuple(widths)
        self.lr = lr
        self.steps = steps
        self.batch = batch
        self.seed = seed

    def _build(self, init_seed: int):
        rng = np.random.default_rng(init_seed)
        self.net_ = PostNet(PostNetConfig(widths=self.widths), rng)
        self.trained_ = False

    def fit(self, samples, callback=None):
        if not samples:
            raise ValueError("need at least one training sample")
        seeds = np.random.SeedSequence(self.seed).spawn(2)
        self._build(seeds[0].generate_state(1)[0])
        rng = np.random.default_rng(seeds[1].generate_state(1)[0])
        params = dict(self.net_.named_parameters())
        opt = Adam(params, lr=self.lr)
        stacks = _stack(samples)
        n = stacks["x"].shape[0]
        self.history_ = []
        for step in range(self.steps):
            take = min(self.batch, n)
            pick = rng.choice(n, size=take, replace=False)
            x = Tensor(stacks["x"][pick])
            target = Tensor(stacks["target"][pick])
            shadow = Tensor(stacks["fg_shadow"][pick])
            opt.zero_grad()
            img, mask = self.net_(x)
            loss_img = tmean((img - target) ** 2)
            loss_m = mask_loss(mask, shadow)
            total = loss_img + loss_m
            value = total.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(f"non-finite rectifier loss at step {step}")
            backward(total)
            opt.step()
            rec = PostLossRecord(step, loss_img.item(), loss_m.item(), value)
            self.history_.append(rec)
            if callback is not None:
                callback(rec)
        self.trained_ = True
        return self

    def predict(self, gen: ImageRGB, composite: ImageRGB, fg_object: BinaryMask):
        self._check_fitted("net_")
        if gen.pixels.shape != composite.pixels.shape:
            raise ValueError("generated image and composite differ in size")
        if fg_object.values.shape != gen.pixels.shape[:2]:
            raise ValueError("object mask does not match image dimensions")
        x = np.concatenate([
            gen.pixels.transpose(2, 0, 1),
            composite.pixels.transpose(2, 0, 1),
            fg_object.values[None],
        ], axis=0)[None]
        with no_grad():
            img, mask = self.net_(Tensor(x))
        rectified = ImageRGB(img.data[0].transpose(1, 2, 0))
        matte = BinaryMask(mask.data[0, 0], soft=True)
        return rectified, matte

    def save(self, path):
        self._check_fitted("net_")
        save_checkpoint(path, {k: v.data for k, v in self.net_.named_parameters().items()})

    def load(self, path):
        if not hasattr(self, "net_"):
            self._build(np.random.SeedSequence(self.seed).spawn(1)[0].generate_state(1)[0])
        self.net_.load_state(load_checkpoint(path))
        self.trained_ = True
        return self


def final_blend(rectified: ImageRGB, composite: ImageRGB, mask: BinaryMask) -> ImageRGB:
    """Soft-composite the rectified image over the original composite.

    Wherever the matte is exactly zero the output equals the composite
    bitwise, so the background survives untouched.
    """
    return blend_soft(rectified, composite, mask)
