"""Image-specific 3-D color lookup tables.

A LUT maps RGB colors through trilinear interpolation on an L x L x L
lattice over [0, 1]^3.  Fitting a LUT from one image to another is a
linear least-squares problem because the trilinear weights are linear in
the table entries; the smoothness term regularizes the deviation from
the identity mapping so that a perfect color match fits exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ..imaging import ImageRGB

DEFAULT_LATTICE = 9
DEFAULT_SMOOTHNESS = 1e-3


class LUTError(ValueError):
    """Raised for malformed tables or unsolvable fits."""


@dataclass(frozen=True)
class LUT3D:
    """Color lattice with axes ordered (r, g, b) and an RGB entry per node."""

    table: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.table, dtype=np.float64)
        if arr.ndim != 4 or arr.shape[3] != 3:
            raise LUTError(f"LUT table must be (L, L, L, 3), got {arr.shape}")
        size = arr.shape[0]
        if size < 2 or arr.shape[1] != size or arr.shape[2] != size:
            raise LUTError(f"LUT lattice must be a cube with L >= 2, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise LUTError("LUT table contains non-finite entries")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise LUTError("LUT entries must lie in [0, 1]")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "table", arr)

    @property
    def size(self) -> int:
        return int(self.table.shape[0])


def identity_lut(size: int = DEFAULT_LATTICE) -> LUT3D:
    """LUT that maps every lattice node to its own coordinate."""
    coords = np.arange(size, dtype=np.float64) / (size - 1)
    table = np.zeros((size, size, size, 3))
    table[..., 0] = coords[:, None, None]
    table[..., 1] = coords[None, :, None]
    table[..., 2] = coords[None, None, :]
    return LUT3D(table)


def _lerp(a: np.ndarray, b: np.ndarray, f: np.ndarray) -> np.ndarray:
    # a + (b - a) * f is exact at f == 0; patch f == 1 so the upper lattice
    # plane is hit bitwise as well.
    out = a + (b - a) * f
    hit = f == 1.0
    if np.any(hit):
        out = np.where(hit, b, out)
    return out


def apply_lut(lut: LUT3D, img: ImageRGB) -> ImageRGB:
    """Map every pixel color through the lattice by trilinear interpolation."""
    size = lut.size
    px = img.pixels
    u = px * (size - 1)
    idx = np.clip(np.floor(u).astype(np.int64), 0, size - 2)
    f = u - idx
    ir, ig, ib = idx[..., 0], idx[..., 1], idx[..., 2]
    fr = f[..., 0:1]
    fg = f[..., 1:2]
    fb = f[..., 2:3]
    t = lut.table
    c00 = _lerp(t[ir, ig, ib], t[ir + 1, ig, ib], fr)
    c10 = _lerp(t[ir, ig + 1, ib], t[ir + 1, ig + 1, ib], fr)
    c01 = _lerp(t[ir, ig, ib + 1], t[ir + 1, ig, ib + 1], fr)
    c11 = _lerp(t[ir, ig + 1, ib + 1], t[ir + 1, ig + 1, ib + 1], fr)
    c0 = _lerp(c00, c10, fg)
    c1 = _lerp(c01, c11, fg)
    out = _lerp(c0, c1, fb)
    return ImageRGB(out)


def perturb_ground_truth(img: ImageRGB, lut: LUT3D) -> ImageRGB:
    """Color-shift an image through a LUT; geometry is untouched by design."""
    return apply_lut(lut, img)


def _corner_weights(px: np.ndarray, size: int):
    """Flat lattice indices and trilinear weights, 8 corners per pixel."""
    u = px.reshape(-1, 3) * (size - 1)
    idx = np.clip(np.floor(u).astype(np.int64), 0, size - 2)
    f = u - idx
    indices = []
    weights = []
    for dr in (0, 1):
        wr = f[:, 0] if dr else 1.0 - f[:, 0]
        for dg in (0, 1):
            wg = f[:, 1] if dg else 1.0 - f[:, 1]
            for db in (0, 1):
                wb = f[:, 2] if db else 1.0 - f[:, 2]
                flat = ((idx[:, 0] + dr) * size + (idx[:, 1] + dg)) * size + (idx[:, 2] + db)
                indices.append(flat)
                weights.append(wr * wg * wb)
    return indices, weights


def _roughness_matrix(size: int) -> np.ndarray:
    """Graph Laplacian over the 6-neighborhood of the lattice."""
    n = size ** 3
    lap = np.zeros((n, n))
    grid = np.arange(n).reshape(size, size, size)
    for axis in range(3):
        a = np.moveaxis(grid, axis, 0)[:-1].ravel()
        b = np.moveaxis(grid, axis, 0)[1:].ravel()
        np.add.at(lap, (a, a), 1.0)
        np.add.at(lap, (b, b), 1.0)
        np.add.at(lap, (a, b), -1.0)
        np.add.at(lap, (b, a), -1.0)
    return lap


def fit_lut(source: ImageRGB, target: ImageRGB,
            smoothness: float = DEFAULT_SMOOTHNESS,
            size: int = DEFAULT_LATTICE) -> LUT3D:
    """Least-squares LUT mapping source colors onto target colors.

    Minimizes the per-pixel color residual plus smoothness times the
    roughness of the deviation from the identity LUT, so a zero-residual
    fit (target == source) returns the identity exactly.  The normal
    equations share one system matrix across the three output channels.
    """
    if source.pixels.shape != target.pixels.shape:
        raise LUTError(
            f"source {source.pixels.shape[:2]} and target {target.pixels.shape[:2]} differ in size")
    if smoothness < 0:
        raise LUTError(f"smoothness must be >= 0, got {smoothness}")
    n = size ** 3
    indices, weights = _corner_weights(source.pixels, size)
    ata = np.zeros((n, n))
    rhs = np.zeros((n, 3))
    tgt = target.pixels.reshape(-1, 3)
    for ci in range(8):
        for cj in range(8):
            np.add.at(ata, (indices[ci], indices[cj]), weights[ci] * weights[cj])
        np.add.at(rhs, indices[ci], weights[ci][:, None] * tgt)
    ident = identity_lut(size).table.reshape(n, 3)
    if smoothness > 0:
        rough = _roughness_matrix(size)
        ata = ata + smoothness * rough
        rhs = rhs + smoothness * (rough @ ident)
    try:
        factor = scipy.linalg.cho_factor(ata)
    except scipy.linalg.LinAlgError:
        raise LUTError(
            "normal equations are singular (sparse color coverage); "
            "set smoothness > 0 to regularize") from None
    solution = scipy.linalg.cho_solve(factor, rhs)
    return LUT3D(np.clip(solution.reshape(size, size, size, 3), 0.0, 1.0))


def color_residual(lut: LUT3D, source: ImageRGB, target: ImageRGB) -> float:
    """Sum of squared per-pixel color errors of the mapped source."""
    mapped = apply_lut(lut, source)
    diff = mapped.pixels - target.pixels
    return float(np.sum(diff * diff))


def random_color_lut(rng: np.random.Generator, size: int = DEFAULT_LATTICE,
                     gamma_range=(0.7, 1.4), gain_range=(0.8, 1.2)) -> LUT3D:
    """Monotone per-channel gamma/gain perturbation lattice."""
    coords = np.arange(size, dtype=np.float64) / (size - 1)
    table = np.zeros((size, size, size, 3))
    axes = (coords[:, None, None], coords[None, :, None], coords[None, None, :])
    for c in range(3):
        gamma = rng.uniform(*gamma_range)
        gain = rng.uniform(*gain_range)
        table[..., c] = np.clip(gain * np.power(axes[c], gamma), 0.0, 1.0)
    return LUT3D(table)


def lut_to_text(lut: LUT3D) -> str:
    """Serialize as a 'LUT3D L' header plus L^3 RGB lines, r varying fastest."""
    rows = lut.table.transpose(2, 1, 0, 3).reshape(-1, 3)
    lines = [f"LUT3D {lut.size}"]
    lines.extend(f"{r:.17g} {g:.17g} {b:.17g}" for r, g, b in rows)
    return "\n".join(lines) + "\n"


def lut_from_text(text: str) -> LUT3D:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise LUTError("empty LUT text")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "LUT3D":
        raise LUTError(f"bad LUT header: {lines[0]!r}")
    try:
        size = int(head[1])
    except ValueError:
        raise LUTError(f"bad lattice size in header: {head[1]!r}") from None
    body = lines[1:]
    if len(body) != size ** 3:
        raise LUTError(f"expected {size ** 3} entries for L={size}, got {len(body)}")
    values = np.array([[float(v) for v in ln.split()] for ln in body])
    if values.shape != (size ** 3, 3):
        raise LUTError("each LUT line must hold exactly three floats")
    table = values.reshape(size, size, size, 3).transpose(2, 1, 0, 3)
    return LUT3D(table)
