"""Procedural toy shadow scenes: flat-shaded objects on textured ground.

Each object is a rectangle, ellipse, or triangle standing on the ground
line through the bottom of its silhouette. Its shadow is the silhouette
sheared along the light azimuth, with length height/tan(elevation),
darkening ground pixels multiplicatively. All masks are exact, pairwise
disjoint, and pre-quantized to the 8-bit grid so PNG round trips are
bitwise identities.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..imaging import BinaryMask, ImageRGB, save_image, save_mask, to_uint8
from ..imaging import _bilinear
from .records import InstanceRecord, SceneManifest, save_manifest


@dataclass(frozen=True)
class ToySceneConfig:
    image_size: int = 64
    min_objects: int = 1
    max_objects: int = 3
    azimuth_deg: tuple[float, float] = (35.0, 145.0)
    elevation_deg: tuple[float, float] = (32.0, 60.0)
    intensity: tuple[float, float] = (0.35, 0.75)
    min_shadow_area: int = 6
    margin: int = 2
    max_tries: int = 80

    def __post_init__(self):
        lo, hi = self.elevation_deg
        if not (5.0 < lo <= hi < 85.0):
            raise ValueError(
                f"elevation range must lie inside (5, 85) degrees, got {self.elevation_deg}")
        lo, hi = self.azimuth_deg
        if not (12.0 < lo <= hi < 168.0):
            raise ValueError(
                f"azimuth range must lie inside (12, 168) degrees, got {self.azimuth_deg}")
        lo, hi = self.intensity
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"intensity factors must lie in (0, 1], got {self.intensity}")
        if not (1 <= self.min_objects <= self.max_objects):
            raise ValueError(
                f"need 1 <= min_objects <= max_objects, got {self.min_objects}, {self.max_objects}")
        if self.image_size < 16:
            raise ValueError(f"image_size must be >= 16, got {self.image_size}")


def _ground_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(0.55, 0.85, size=3)
    coarse = rng.uniform(-0.08, 0.08, size=(5, 5, 3))
    tex = base[None, None, :] + _bilinear(coarse, size, size)
    return np.clip(tex, 0.25, 0.95)


def _silhouette(rng: np.random.Generator, size: int, margin: int) -> np.ndarray:
    """Random object silhouette as a bool grid; bottom row is the ground contact."""
    s = size
    h = int(rng.uniform(0.15, 0.30) * s)
    w = int(rng.uniform(0.12, 0.28) * s)
    h = max(h, 5)
    w = max(w, 4)
    r0 = int(rng.uniform(0.30, 0.55) * s)
    c_mid = int(rng.uniform(margin + w // 2 + 1, s - margin - w // 2 - 2))
    shape = rng.choice(("rect", "ellipse", "triangle"))
    rows = np.arange(s)[:, None]
    cols = np.arange(s)[None, :]
    r1 = r0 - h + 1
    c1 = c_mid - w // 2
    c2 = c1 + w - 1
    if shape == "rect":
        sil = (rows >= r1) & (rows <= r0) & (cols >= c1) & (cols <= c2)
    elif shape == "ellipse":
        rc = (r1 + r0) / 2.0
        a_r = (r0 - r1) / 2.0 + 0.5
        a_c = (c2 - c1) / 2.0 + 0.5
        sil = ((rows - rc) / a_r) ** 2 + ((cols - c_mid) / a_c) ** 2 <= 1.0
    else:
        # apex-up triangle: half-width grows linearly from apex row to base row
        frac = np.clip((rows - r1) / max(r0 - r1, 1), 0.0, 1.0)
        halfw = frac * (w / 2.0)
        sil = (rows >= r1) & (rows <= r0) & (np.abs(cols - c_mid) <= halfw)
    if r1 < margin:
        sil[:margin, :] = False
    return sil


def _cast_shadow(sil: np.ndarray, azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """Shear the silhouette onto the ground via an exact inverse mapping.

    A silhouette pixel at height h above the contact row lands at ground
    distance h/tan(elevation) along the azimuth direction, so every ground
    pixel is mapped back and tested against the silhouette (no holes).
    """
    s = sil.shape[0]
    set_rows = np.nonzero(sil.any(axis=1))[0]
    if set_rows.size == 0:
        return np.zeros_like(sil)
    r0 = int(set_rows.max())
    az = math.radians(azimuth_deg)
    uy, ux = math.sin(az), math.cos(az)
    slope = math.tan(math.radians(elevation_deg))
    rows = np.arange(s, dtype=np.float64)[:, None]
    cols = np.arange(s, dtype=np.float64)[None, :]
    d = (rows - r0) / uy
    rs = np.rint(r0 - d * slope).astype(int)
    cs = np.rint(cols - d * ux).astype(int)
    rs, cs, d = np.broadcast_arrays(rs, cs, d)
    valid = (d > 0) & (rs >= 0) & (rs < s) & (cs >= 0) & (cs < s)
    out = np.zeros_like(sil)
    out[valid] = sil[rs[valid], cs[valid]]
    return out & ~sil


def generate_toy_scene(seed: int, config: ToySceneConfig, out_dir: Path,
                       scene_id: str | None = None) -> SceneManifest:
    """Render one scene to ``out_dir`` and return its manifest (also written there)."""
    rng = np.random.default_rng(seed)
    s = config.image_size
    scene_id = scene_id or f"scene_{seed:08d}"
    out_dir = Path(out_dir)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    ground = _ground_texture(rng, s)
    azimuth = rng.uniform(*config.azimuth_deg)
    elevation = rng.uniform(*config.elevation_deg)
    factor = rng.uniform(*config.intensity)
    n_objects = int(rng.integers(config.min_objects, config.max_objects + 1))

    placed: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    occupied = np.zeros((s, s), dtype=bool)
    for k in range(n_objects):
        ok = False
        for _ in range(config.max_tries):
            sil = _silhouette(rng, s, config.margin)
            if not sil.any():
                continue
            shadow = _cast_shadow(sil, azimuth, elevation)
            if shadow.sum() < config.min_shadow_area:
                continue
            footprint = sil | shadow
            if (footprint & occupied).any():
                continue
            color = rng.uniform(0.05, 0.60, size=3)
            occupied |= footprint
            placed.append((sil, shadow, color))
            ok = True
            break
        if not ok:
            if k == 0:
                raise RuntimeError(f"scene {scene_id}: could not place any object after "
                                   f"{config.max_tries} tries")
            break

    shadow_all = np.zeros((s, s), dtype=bool)
    for _, shadow, _ in placed:
        shadow_all |= shadow

    deshadowed = ground.copy()
    real = ground.copy()
    real[shadow_all] *= factor
    for sil, _, color in placed:
        deshadowed[sil] = color
        real[sil] = color

    # snap to the 8-bit grid before saving so the PNG round trip is exact
    real_q = to_uint8(real).astype(np.float64) / 255.0
    desh_q = to_uint8(deshadowed).astype(np.float64) / 255.0
    save_image(ImageRGB(real_q), out_dir / "real.png")
    save_image(ImageRGB(desh_q), out_dir / "deshadowed.png")

    instances = []
    for k, (sil, shadow, _) in enumerate(placed):
        save_mask(BinaryMask(sil.astype(np.float64)), out_dir / "masks" / f"object_{k}.png")
        save_mask(BinaryMask(shadow.astype(np.float64)), out_dir / "masks" / f"shadow_{k}.png")
        instances.append(InstanceRecord(
            instance_id=k,
            object_mask=f"masks/object_{k}.png",
            shadow_mask=f"masks/shadow_{k}.png",
            valid=True,
        ))
    manifest = SceneManifest(
        scene_id=scene_id,
        real_image="real.png",
        deshadowed_image="deshadowed.png",
        instances=tuple(instances),
        root=out_dir,
    )
    save_manifest(manifest)
    return manifest


def split_scenes(scene_ids: list[str], test_fraction: float, seed: int) -> dict[str, list[str]]:
    """Seeded disjoint train/test split, reproducible for a given id list."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    order = list(scene_ids)
    rng.shuffle(order)
    n_test = max(1, int(round(test_fraction * len(order))))
    if n_test >= len(order):
        raise ValueError(f"test_fraction {test_fraction} leaves no training scenes")
    test = sorted(order[:n_test])
    train = sorted(order[n_test:])
    return {"train": train, "test": test}


def _worker_count() -> int:
    cap = os.environ.get("SHADOWLAB_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def _generate_one(args) -> str:
    seed, config, scene_dir, scene_id = args
    generate_toy_scene(seed, config, scene_dir, scene_id)
    return scene_id


def generate_toy_dataset(root: Path, n_train: int, n_test: int,
                         config: ToySceneConfig, seed: int) -> dict[str, list[str]]:
    """Generate scenes plus a split file; returns the split mapping."""
    root = Path(root)
    scenes_dir = root / "scenes"
    scenes_dir.mkdir(parents=True, exist_ok=True)
    n = n_train + n_test
    child_seeds = np.random.SeedSequence(seed).generate_state(n)
    jobs = []
    for idx in range(n):
        scene_id = f"scene_{idx:05d}"
        jobs.append((int(child_seeds[idx]), config, scenes_dir / scene_id, scene_id))
    workers = _worker_count()
    if workers > 1 and n > 8:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            ids = list(pool.map(_generate_one, jobs, chunksize=8))
    else:
        ids = [_generate_one(job) for job in jobs]
    split = {"train": ids[:n_train], "test": ids[n_train:]}
    (root / "split.json").write_text(json.dumps(split, indent=2) + "\n")
    return split
