"""Dual-decoder rectification network.

One shared encoder and two decoders (image and mask), four blocks each.
Every block is three 3x3 convolutions with ReLU; the encoder halves the
resolution after each block by average pooling and both decoders double
it back by nearest-neighbor upsampling.  Each encoder block feeds a skip
connection to both decoders at the matching resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics.nn import Conv2d, Module
from ..numerics.tensor import Tensor, concat, relu, reshape, sigmoid, tmean, upsample2x

BLOCKS = 4


@dataclass(frozen=True)
class PostNetConfig:
    widths: tuple = (16, 24, 32, 48)
    in_channels: int = 7

    def __post_init__(self):
        if len(self.widths) != BLOCKS:
            raise ValueError(f"PostNet uses {BLOCKS} blocks, got widths {self.widths}")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be positive, got {self.in_channels}")


def _avgpool2x(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    return tmean(reshape(x, (n, c, h // 2, 2, w // 2, 2)), axis=(3, 5))


class _TripleConv(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(cin, cout, 3, rng=rng)
        self.conv2 = Conv2d(cout, cout, 3, rng=rng)
        self.conv3 = Conv2d(cout, cout, 3, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = relu(self.conv1(x))
        x = relu(self.conv2(x))
        return relu(self.conv3(x))


class PostNet(Module):
    """Concat(generated, composite, object mask) -> (rectified image, shadow mask)."""

    def __init__(self, config: PostNetConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        w = config.widths
        enc_in = (config.in_channels,) + w[:-1]
        self.enc_blocks = [_TripleConv(enc_in[i], w[i], rng) for i in range(BLOCKS)]
        # decoder block i consumes the upsampled features plus the skip from
        # encoder block BLOCKS-1-i
        dec_in = []
        carry = w[-1]
        dec_w = []
        for i in range(BLOCKS):
            skip = w[BLOCKS - 1 - i]
            dec_in.append(carry + skip)
            carry = skip
            dec_w.append(skip)
        self.dec_img = [_TripleConv(dec_in[i], dec_w[i], rng) for i in range(BLOCKS)]
        self.dec_mask = [_TripleConv(dec_in[i], dec_w[i], rng) for i in range(BLOCKS)]
        self.head_img = Conv2d(dec_w[-1], 3, 3, rng=rng)
        self.head_mask = Conv2d(dec_w[-1], 1, 3, rng=rng)

    def __call__(self, x: Tensor):
        n, c, h, vw = x.shape
        if c != self.config.in_channels:
            raise ValueError(f"expected {self.config.in_channels} input channels, got {c}")
        factor = 2 ** BLOCKS
        if h % factor or vw % factor:
            raise ValueError(f"input resolution {h}x{vw} must be divisible by {factor}")
        skips = []
        for block in self.enc_blocks:
            x = block(x)
            skips.append(x)
            x = _avgpool2x(x)

        def decode(blocks):
            y = x
            for i, block in enumerate(blocks):
                y = upsample2x(y)
                y = block(concat((y, skips[BLOCKS - 1 - i]), axis=1))
            return y

        img = sigmoid(self.head_img(decode(self.dec_img)))
        mask = sigmoid(self.head_mask(decode(self.dec_mask)))
        return img, mask
