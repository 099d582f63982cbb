"""Image and binary-mask value types plus mask algebra and compositing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage


@dataclass(frozen=True)
class ImageRGB:
    """An H x W x 3 float64 image with channel values in [0, 1].

    The pixel buffer is copied and marked read-only at construction so a
    value, once built, cannot drift.
    """

    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"ImageRGB needs an (H, W, 3) buffer, got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"ImageRGB needs positive dimensions, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("ImageRGB contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(f"ImageRGB values must lie in [0,1], got range [{arr.min()}, {arr.max()}]")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class BinaryMask:
    """An H x W float64 mask; hard masks contain only {0, 1}, soft ones [0, 1]."""

    values: np.ndarray = field(repr=False)
    soft: bool = False

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"BinaryMask needs an (H, W) buffer, got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"BinaryMask needs positive dimensions, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("BinaryMask contains non-finite values")
        if self.soft:
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ValueError(f"soft mask values must lie in [0,1], got range [{arr.min()}, {arr.max()}]")
        else:
            if not np.isin(arr, (0.0, 1.0)).all():
                bad = arr[~np.isin(arr, (0.0, 1.0))]
                raise ValueError(f"hard mask may contain only 0 or 1, found e.g. {bad.flat[0]}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def area(self) -> int:
        return int(np.count_nonzero(self.values))


def _check_same_hw(*items):
    shapes = [(it.height, it.width) for it in items]
    if len(set(shapes)) > 1:
        raise ValueError(f"dimension mismatch: {shapes}")


def _require_hard(mask: BinaryMask, what: str):
    if mask.soft:
        raise ValueError(f"{what} requires a hard mask, got a soft one")


# ---------------------------------------------------------------------------
# mask algebra


def mask_union(masks: list[BinaryMask]) -> BinaryMask:
    """Pixelwise union of hard masks."""
    if not masks:
        raise ValueError("mask_union requires at least one mask")
    for m in masks:
        _require_hard(m, "mask_union")
    _check_same_hw(*masks)
    acc = masks[0].values
    for m in masks[1:]:
        acc = np.maximum(acc, m.values)
    return BinaryMask(acc)


def dilate(mask: BinaryMask, radius: int) -> BinaryMask:
    """Dilate a hard mask with a square (2r+1)-sided structuring element."""
    if radius <= 0:
        raise ValueError(f"dilate radius must be a positive int, got {radius}")
    _require_hard(mask, "dilate")
    out = ndimage.maximum_filter(mask.values, size=2 * radius + 1, mode="constant", cval=0.0)
    return BinaryMask(out)


def region_replace(dst: ImageRGB, src: ImageRGB, mask: BinaryMask) -> ImageRGB:
    """src where the mask is set, dst elsewhere; exact pixel copies on both sides."""
    _require_hard(mask, "region_replace")
    _check_same_hw(dst, src, mask)
    sel = mask.values[:, :, None] == 1.0
    return ImageRGB(np.where(sel, src.pixels, dst.pixels))


def blend_soft(a: ImageRGB, b: ImageRGB, mask: BinaryMask) -> ImageRGB:
    """Convex blend a*mask + b*(1-mask); exact where the mask is 0 or 1."""
    _check_same_hw(a, b, mask)
    m = mask.values[:, :, None]
    if m.min() < 0.0 or m.max() > 1.0:
        raise ValueError("blend mask values must lie in [0,1]")
    out = a.pixels * m + b.pixels * (1.0 - m)
    # convex combination can overshoot by an ulp in float arithmetic
    return ImageRGB(np.clip(out, 0.0, 1.0))


# ---------------------------------------------------------------------------
# resizing


def _bilinear(arr: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel-centered sampling; identity at equal size."""
    h, w = arr.shape[:2]
    src_y = np.clip((np.arange(new_h) + 0.5) * (h / new_h) - 0.5, 0.0, h - 1.0)
    src_x = np.clip((np.arange(new_w) + 0.5) * (w / new_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(src_y).astype(int)
    x0 = np.floor(src_x).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (src_y - y0).reshape(-1, 1)
    fx = (src_x - x0).reshape(1, -1)
    if arr.ndim == 3:
        fy = fy[:, :, None]
        fx = fx[:, :, None]
    top = arr[y0][:, x0] + (arr[y0][:, x1] - arr[y0][:, x0]) * fx
    bot = arr[y1][:, x0] + (arr[y1][:, x1] - arr[y1][:, x0]) * fx
    return top + (bot - top) * fy


def _nearest(arr: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    h, w = arr.shape[:2]
    ys = np.minimum((np.arange(new_h) + 0.5) * (h / new_h), h - 1).astype(int)
    xs = np.minimum((np.arange(new_w) + 0.5) * (w / new_w), w - 1).astype(int)
    return arr[ys][:, xs]


def resize(value, new_h: int, new_w: int):
    """Resize an ImageRGB (bilinear) or BinaryMask (nearest if hard, bilinear if soft)."""
    if new_h < 1 or new_w < 1:
        raise ValueError(f"resize targets must be positive, got {new_h}x{new_w}")
    if isinstance(value, ImageRGB):
        if (new_h, new_w) == (value.height, value.width):
            return ImageRGB(value.pixels)
        return ImageRGB(np.clip(_bilinear(value.pixels, new_h, new_w), 0.0, 1.0))
    if isinstance(value, BinaryMask):
        if (new_h, new_w) == (value.height, value.width):
            return BinaryMask(value.values, soft=value.soft)
        if value.soft:
            return BinaryMask(np.clip(_bilinear(value.values, new_h, new_w), 0.0, 1.0), soft=True)
        return BinaryMask(_nearest(value.values, new_h, new_w))
    raise TypeError(f"resize expects ImageRGB or BinaryMask, got {type(value).__name__}")


# ---------------------------------------------------------------------------
# PNG round trip


def to_uint8(arr: np.ndarray) -> np.ndarray:
    """Quantize [0,1] floats to 8-bit, rounding half-up (np.round would round half-even)."""
    return np.floor(np.asarray(arr) * 255.0 + 0.5).astype(np.uint8)


def save_image(img: ImageRGB, path):
    Image.fromarray(to_uint8(img.pixels), mode="RGB").save(path, format="PNG")


def load_image(path) -> ImageRGB:
    try:
        with Image.open(path) as im:
            if im.mode != "RGB":
                raise ValueError(f"{path}: expected an 8-bit RGB PNG, got mode {im.mode!r}")
            arr = np.asarray(im, dtype=np.float64)
    except FileNotFoundError:
        raise
    except (OSError, SyntaxError) as exc:
        raise ValueError(f"{path}: unreadable image ({exc})") from exc
    return ImageRGB(arr / 255.0)


def save_mask(mask: BinaryMask, path):
    Image.fromarray(to_uint8(mask.values), mode="L").save(path, format="PNG")


def load_mask(path, soft: bool = False) -> BinaryMask:
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise ValueError(f"{path}: expected an 8-bit grayscale PNG, got mode {im.mode!r}")
            arr = np.asarray(im, dtype=np.float64)
    except FileNotFoundError:
        raise
    except (OSError, SyntaxError) as exc:
        raise ValueError(f"{path}: unreadable image ({exc})") from exc
    if soft:
        return BinaryMask(arr / 255.0, soft=True)
    levels = np.unique(arr)
    if not np.isin(levels, (0.0, 255.0)).all():
        raise ValueError(f"{path}: hard mask PNG may contain only 0 and 255, found levels {levels[:8]}")
    return BinaryMask(arr / 255.0)
