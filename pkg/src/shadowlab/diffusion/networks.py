"""Toy denoising U-Net, control encoder, mask predictor, intensity encoder.

The denoiser is a depth-3 miniature of the usual encoder/middle/decoder
layout with skip connections. The control encoder is a trainable copy of
the down path whose outputs enter the decoder skips and middle block
through zero-initialized 1x1 convolutions, so an untrained copy
contributes exactly nothing. The mask predictor reads the decoder
features; the intensity encoder squeezes the conditioning pair into one
scale/bias vector per channel.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from ..numerics import (
    Conv2d,
    GroupNorm,
    Linear,
    Module,
    ShapeError,
    Tensor,
    concat,
    relu,
    sigmoid,
    silu,
    timestep_embedding,
    tmean,
    upsample2x,
)
from .losses import ModulationParams


@dataclass(frozen=True)
class DenoiserConfig:
    base_channels: int = 16
    depth: int = 3
    image_size: int = 64
    time_dim: int = 32

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.image_size % (2 ** self.depth) != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by 2^depth = {2 ** self.depth}")
        if self.base_channels % 8 != 0:
            raise ValueError(f"base_channels must be a multiple of 8, got {self.base_channels}")
        if self.time_dim % 2 != 0:
            raise ValueError(f"time_dim must be even, got {self.time_dim}")

    @property
    def channels(self) -> list[int]:
        return [self.base_channels * (2 ** i) for i in range(self.depth)]


class ConvBlock(Module):
    """conv3x3 -> add time bias -> group norm -> SiLU."""

    def __init__(self, cin: int, cout: int, time_dim: int, rng: np.random.Generator):
        super().__init__()
        self.cout = cout
        self.conv = Conv2d(cin, cout, 3, rng)
        self.time = Linear(time_dim, cout, rng)
        self.norm = GroupNorm(cout, groups=8)

    def __call__(self, x: Tensor, temb: Tensor) -> Tensor:
        h = self.conv(x) + self.time(temb).reshape((1, self.cout, 1, 1))
        return silu(self.norm(h))


def _clone(module: Module) -> Module:
    dup = copy.deepcopy(module)
    for p in dup.parameters():
        p.grad = None
    return dup


class Denoiser(Module):
    """Predicts the noise in z_t; returns decoder features for the mask head."""

    def __init__(self, config: DenoiserConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        ch = config.channels
        td = config.time_dim
        self.stem = Conv2d(3, ch[0], 3, rng)
        self.down_blocks = [ConvBlock(ch[i], ch[i], td, rng) for i in range(config.depth)]
        self.downs = [
            Conv2d(ch[i], ch[min(i + 1, config.depth - 1)], 3, rng, stride=2)
            for i in range(config.depth)
        ]
        self.middle = ConvBlock(ch[-1], ch[-1], td, rng)
        up_in = [ch[i + 1] if i + 1 < config.depth else ch[-1] for i in range(config.depth)]
        self.up_blocks = [ConvBlock(up_in[i] + ch[i], ch[i], td, rng) for i in range(config.depth)]
        self.head = Conv2d(ch[0], 3, 3, rng)

    def _check_resolution(self, z: Tensor):
        s = self.config.image_size
        if z.ndim != 4 or z.shape[2] != s or z.shape[3] != s:
            raise ShapeError(f"denoiser configured for {s}x{s}, got input {z.shape}")

    def __call__(self, z: Tensor, t: int, injections: list[Tensor] | None = None
                 ) -> tuple[Tensor, list[Tensor]]:
        self._check_resolution(z)
        depth = self.config.depth
        if injections is not None and len(injections) != depth + 1:
            raise ShapeError(f"expected {depth + 1} injection maps, got {len(injections)}")
        temb = Tensor(timestep_embedding(t, self.config.time_dim)[None])
        h = self.stem(z)
        skips: list[Tensor] = []
        for i in range(depth):
            h = self.down_blocks[i](h, temb)
            skips.append(h)
            h = self.downs[i](h)
        h = self.middle(h, temb)
        if injections is not None:
            h = h + injections[-1]
        feats: list[Tensor] = []
        for i in reversed(range(depth)):
            h = upsample2x(h)
            skip = skips[i] if injections is None else skips[i] + injections[i]
            h = self.up_blocks[i](concat([h, skip], axis=1), temb)
            feats.append(h)
        return self.head(h), feats

    def feature_channels(self) -> list[int]:
        # decoder features come out deepest first
        return list(reversed(self.config.channels))


class ControlEncoder(Module):
    """Trainable copy of the denoiser down path conditioned on (I_c, M_fo).

    Produces one zero-convolved feature map per decoder skip level plus one
    for the middle block: depth + 1 maps in total.
    """

    def __init__(self, denoiser: Denoiser, rng: np.random.Generator):
        super().__init__()
        config = denoiser.config
        self.config = config
        ch = config.channels
        self.stem_cond = Conv2d(4, ch[0], 3, rng)
        self.stem_z = _clone(denoiser.stem)
        self.blocks = [_clone(b) for b in denoiser.down_blocks]
        self.downs = [_clone(d) for d in denoiser.downs]
        self.middle = _clone(denoiser.middle)
        self.zero_convs = [Conv2d(ch[i], ch[i], 1, zero_init=True) for i in range(config.depth)]
        self.zero_conv_middle = Conv2d(ch[-1], ch[-1], 1, zero_init=True)

    def __call__(self, cond: Tensor, z: Tensor, t: int) -> list[Tensor]:
        s = self.config.image_size
        if cond.ndim != 4 or cond.shape[1] != 4 or cond.shape[2] != s or cond.shape[3] != s:
            raise ShapeError(f"control input must be (N, 4, {s}, {s}), got {cond.shape}")
        if z.shape[0] != cond.shape[0] or z.shape[2] != s or z.shape[3] != s:
            raise ShapeError(f"latent {z.shape} does not match control input {cond.shape}")
        temb = Tensor(timestep_embedding(t, self.config.time_dim)[None])
        h = self.stem_cond(cond) + self.stem_z(z)
        injections: list[Tensor] = []
        for i in range(self.config.depth):
            h = self.blocks[i](h, temb)
            injections.append(self.zero_convs[i](h))
            h = self.downs[i](h)
        h = self.middle(h, temb)
        injections.append(self.zero_conv_middle(h))
        return injections


class MaskHead(Module):
    """Four convolutions over upsampled decoder features plus the object mask.

    ReLU follows the first three layers, sigmoid the last; the final layer is
    zero-initialized so an untrained head answers 0.5 everywhere.
    """

    def __init__(self, feat_channels: list[int], rng: np.random.Generator, width: int = 16):
        super().__init__()
        cin = sum(feat_channels) + 1
        self.conv1 = Conv2d(cin, width, 1, rng)
        self.conv2 = Conv2d(width, width // 2, 3, rng)
        self.conv3 = Conv2d(width // 2, width // 2, 3, rng)
        self.conv4 = Conv2d(width // 2, 1, 3, zero_init=True)

    def __call__(self, feats: list[Tensor], fg_object: Tensor) -> Tensor:
        if not feats:
            raise ValueError("mask head needs at least one decoder feature map")
        size = fg_object.shape[2]
        ups = []
        for f in feats:
            while f.shape[2] < size:
                f = upsample2x(f)
            if f.shape[2] != size:
                raise ShapeError(f"feature map {f.shape} cannot reach resolution {size}")
            ups.append(f)
        x = concat(ups + [fg_object], axis=1)
        h = relu(self.conv1(x))
        h = relu(self.conv2(h))
        h = relu(self.conv3(h))
        return sigmoid(self.conv4(h))


class IntensityEncoder(Module):
    """Squeezes (I_c, M_bs) into per-channel noise scale and bias.

    Global average pooling feeds two zero-initialized linear heads, so the
    untrained encoder yields s = 1, b = 0: exact identity modulation.
    """

    def __init__(self, rng: np.random.Generator, channels: int = 3):
        super().__init__()
        self.conv1 = Conv2d(4, 16, 3, rng, stride=2)
        self.norm1 = GroupNorm(16, groups=8)
        self.conv2 = Conv2d(16, 32, 3, rng, stride=2)
        self.norm2 = GroupNorm(32, groups=8)
        self.conv3 = Conv2d(32, 64, 3, rng, stride=2)
        self.norm3 = GroupNorm(64, groups=8)
        self.fc_scale = Linear(64, channels, zero_init=True)
        self.fc_bias = Linear(64, channels, zero_init=True)

    def __call__(self, cond: Tensor) -> ModulationParams:
        if cond.ndim != 4 or cond.shape[1] != 4:
            raise ShapeError(f"intensity encoder expects (N, 4, H, W), got {cond.shape}")
        h = silu(self.norm1(self.conv1(cond)))
        h = silu(self.norm2(self.conv2(h)))
        h = silu(self.norm3(self.conv3(h)))
        pooled = tmean(h, axis=(2, 3))
        return ModulationParams(s=self.fc_scale(pooled) + 1.0, b=self.fc_bias(pooled))
