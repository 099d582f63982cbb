"""Image metrics, best-of-k candidate selection, and dataset-level reports.

RMSE and SSIM are computed on the 0-255 scale (per channel, averaged for
SSIM) so magnitudes are comparable across tools that quantize.  Local
variants restrict the pixel set, or the SSIM index map, to a region mask
whose windows still see the surrounding pixels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.ndimage

from .imaging import BinaryMask, ImageRGB, load_image, load_mask
from .dataset.synth import read_tuple, tuple_dirs

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2


class EvaluationError(ValueError):
    """Raised for degenerate metric inputs or missing evaluation files."""


def _check_pair(gen: ImageRGB, gt: ImageRGB):
    if gen.pixels.shape != gt.pixels.shape:
        raise EvaluationError(
            f"image dimensions differ: {gen.pixels.shape[:2]} vs {gt.pixels.shape[:2]}")


def _region_index(region: BinaryMask | None, shape) -> np.ndarray | None:
    if region is None:
        return None
    if region.soft:
        raise EvaluationError("region mask must be hard")
    if region.values.shape != shape:
        raise EvaluationError(
            f"region {region.values.shape} does not match image {shape}")
    idx = region.values > 0.5
    if not idx.any():
        raise EvaluationError("region mask is empty")
    return idx


def rmse(gen: ImageRGB, gt: ImageRGB, region: BinaryMask | None = None) -> float:
    """Root-mean-square color error on the 0-255 scale."""
    _check_pair(gen, gt)
    diff = (gen.pixels - gt.pixels) * 255.0
    idx = _region_index(region, gen.pixels.shape[:2])
    if idx is not None:
        diff = diff[idx]
    return float(np.sqrt(np.mean(diff * diff)))


def _gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = size // 2
    d = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(d * d) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


_KERNEL = _gaussian_kernel()


def _filter(x: np.ndarray) -> np.ndarray:
    return scipy.ndimage.correlate(x, _KERNEL, mode="reflect")


def ssim_map(gen: ImageRGB, gt: ImageRGB) -> np.ndarray:
    """Full-resolution SSIM index map, channels averaged.

    The Gaussian window reflects at the borders so the map keeps the image
    resolution and region restriction stays a plain pixel selection.
    """
    _check_pair(gen, gt)
    maps = []
    for c in range(3):
        x = gen.pixels[..., c] * 255.0
        y = gt.pixels[..., c] * 255.0
        mu_x = _filter(x)
        mu_y = _filter(y)
        var_x = _filter(x * x) - mu_x * mu_x
        var_y = _filter(y * y) - mu_y * mu_y
        cov = _filter(x * y) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
        den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
        maps.append(num / den)
    return (maps[0] + maps[1] + maps[2]) / 3.0


def ssim(gen: ImageRGB, gt: ImageRGB, region: BinaryMask | None = None) -> float:
    """Mean SSIM over the whole image or over a region of the index map."""
    smap = ssim_map(gen, gt)
    idx = _region_index(region, gen.pixels.shape[:2])
    if idx is not None:
        smap = smap[idx]
    return float(np.mean(smap))


def ber(pred: BinaryMask, gt: BinaryMask, region: BinaryMask | None = None) -> float:
    """Balanced error rate of the predicted mask at threshold 0.5.

    Global form averages the miss rates of both classes; restricted to a
    region that holds only positives it degrades to the miss rate alone,
    so an empty prediction scores 1.0 locally and 0.5 globally.
    """
    if pred.values.shape != gt.values.shape:
        raise EvaluationError(
            f"mask dimensions differ: {pred.values.shape} vs {gt.values.shape}")
    if gt.soft:
        raise EvaluationError("ground-truth mask must be hard")
    p = pred.values >= 0.5
    g = gt.values > 0.5
    idx = _region_index(region, gt.values.shape)
    if idx is not None:
        p = p[idx]
        g = g[idx]
    np_count = int(g.sum())
    nn_count = int(g.size - np_count)
    if np_count == 0:
        raise EvaluationError("no positive pixels in the ground-truth mask")
    fn = int((~p & g).sum())
    if nn_count == 0:
        if region is None:
            raise EvaluationError("no negative pixels in the ground-truth mask")
        return fn / np_count
    fp = int((p & ~g).sum())
    return 0.5 * (fn / np_count + fp / nn_count)


def best_of_k(candidates, gt: ImageRGB, gt_shadow: BinaryMask, k: int | None = None) -> int:
    """Index of the candidate whose local SSIM over the shadow region is
    highest; ties break toward the lowest index."""
    if not candidates:
        raise EvaluationError("need at least one candidate")
    pool = candidates if k is None else candidates[:k]
    if k is not None and len(candidates) < k:
        raise EvaluationError(f"need {k} candidates, got {len(candidates)}")
    best_idx = 0
    best_val = -np.inf
    for i, (image, _mask) in enumerate(pool):
        val = ssim(image, gt, region=gt_shadow)
        if val > best_val:
            best_val = val
            best_idx = i
    return best_idx


@dataclass(frozen=True)
class MetricReport:
    """Mean metric values over one evaluation split."""

    GR: float
    LR: float
    GS: float
    LS: float
    GB: float
    LB: float
    n: int

    def to_dict(self) -> dict:
        return {"GR": self.GR, "LR": self.LR, "GS": self.GS,
                "LS": self.LS, "GB": self.GB, "LB": self.LB, "n": self.n}


def measure_tuple(image: ImageRGB, mask: BinaryMask, t) -> dict:
    """All six metrics of one selected candidate against a tuple's truth."""
    return {
        "GR": rmse(image, t.target),
        "LR": rmse(image, t.target, region=t.fg_shadow),
        "GS": ssim(image, t.target),
        "LS": ssim(image, t.target, region=t.fg_shadow),
        "GB": ber(mask, t.fg_shadow),
        "LB": ber(mask, t.fg_shadow, region=t.fg_shadow),
    }


def _mean_report(rows: list[dict]) -> MetricReport:
    keys = ("GR", "LR", "GS", "LS", "GB", "LB")
    means = {k: float(np.mean([r[k] for r in rows])) for k in keys}
    return MetricReport(n=len(rows), **means)


def candidate_paths(outputs_root: Path, tuple_dir: Path, tuples_root: Path, k: int):
    rel = tuple_dir.relative_to(tuples_root)
    base = Path(outputs_root) / rel
    return [(base / f"cand_{j}.png", base / f"cand_{j}_mask.png") for j in range(k)]


def evaluate_dataset(outputs_root, tuples_root, k: int = 1) -> dict:
    """Best-of-k metrics per tuple, averaged per split.

    Splits by whether the scene carries background shadows next to the
    inserted object ("bos") or not ("bos_free"); "all" covers both.  Every
    tuple must have k candidate images and mask files under the mirrored
    directory layout, else the missing ids are listed.
    """
    outputs_root = Path(outputs_root)
    tuples_root = Path(tuples_root)
    if k < 1:
        raise EvaluationError(f"k must be >= 1, got {k}")
    dirs = tuple_dirs(tuples_root)
    if not dirs:
        raise EvaluationError(f"no tuples found under {tuples_root}")
    missing = []
    for d in dirs:
        for img_path, mask_path in candidate_paths(outputs_root, d, tuples_root, k):
            if not img_path.exists() or not mask_path.exists():
                missing.append(str(d.relative_to(tuples_root)))
                break
    if missing:
        raise EvaluationError("missing candidates for: " + ", ".join(missing))

    rows_all: list[dict] = []
    rows_bos: list[dict] = []
    rows_free: list[dict] = []
    for d in dirs:
        t = read_tuple(d)
        cands = []
        for img_path, mask_path in candidate_paths(outputs_root, d, tuples_root, k):
            image = load_image(img_path)
            mask = load_mask(mask_path, soft=True)
            cands.append((image, mask))
        pick = best_of_k(cands, t.target, t.fg_shadow)
        row = measure_tuple(cands[pick][0], cands[pick][1], t)
        rows_all.append(row)
        if t.bg_shadow.area() > 0:
            rows_bos.append(row)
        else:
            rows_free.append(row)

    report = {"all": _mean_report(rows_all).to_dict()}
    if rows_bos:
        report["bos"] = _mean_report(rows_bos).to_dict()
    if rows_free:
        report["bos_free"] = _mean_report(rows_free).to_dict()
    return report


def write_report(report: dict, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
