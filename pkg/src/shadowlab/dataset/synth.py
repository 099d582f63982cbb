"""Composite/ground-truth synthesis and tuple assembly from scene manifests."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..imaging import (
    BinaryMask,
    ImageRGB,
    load_image,
    load_mask,
    mask_union,
    region_replace,
    save_image,
    save_mask,
)
from .records import DatasetError, SceneData, SceneManifest, load_scene


@dataclass(frozen=True)
class ShadowTuple:
    """One training/evaluation item: composite in, target out, masks as handles.

    composite: scene with the foreground shadow removed (everything else intact).
    fg_object: foreground object mask.
    fg_shadow: foreground shadow mask (what the model must synthesize).
    bg_shadow: union of the other instances' shadow masks; all zeros when the
        foreground object is the only one.
    target: scene with every shadow present.
    """

    composite: ImageRGB
    fg_object: BinaryMask
    fg_shadow: BinaryMask
    bg_shadow: BinaryMask
    target: ImageRGB


@dataclass
class ValidationReport:
    passed: bool
    reasons: list[str] = field(default_factory=list)


def _scene(manifest_or_data) -> SceneData:
    if isinstance(manifest_or_data, SceneData):
        return manifest_or_data
    return load_scene(manifest_or_data)


def synthesize_composite(manifest: SceneManifest | SceneData, fg_index: int,
                         strategy: int = 2) -> ImageRGB:
    """Build I_c for one foreground instance.

    Strategy 2 (default): start from the deshadowed image and paste back the
    *other* instances' shadow regions from the real image, so the foreground
    shadow is the only thing missing. Strategy 1 (kept as an ablation flag)
    instead starts from the real image and erases the foreground shadow with
    deshadowed pixels, which can leave traces along the shadow boundary.
    """
    data = _scene(manifest_or_data=manifest)
    valid = {inst.instance_id for inst in data.manifest.valid_instances()}
    if fg_index not in valid:
        raise DatasetError(
            f"scene {data.manifest.scene_id}: fg_index {fg_index} is not a valid instance "
            f"(valid: {sorted(valid)})")
    if strategy == 2:
        others = [data.shadow_masks[i] for i in sorted(valid) if i != fg_index]
        if not others:
            return ImageRGB(data.deshadowed.pixels)
        bg_shadow = mask_union(others)
        return region_replace(data.deshadowed, data.real, bg_shadow)
    if strategy == 1:
        return region_replace(data.real, data.deshadowed, data.shadow_masks[fg_index])
    raise ValueError(f"unknown composite strategy {strategy}; use 1 or 2")


def synthesize_ground_truth(manifest: SceneManifest | SceneData) -> ImageRGB:
    """Build I_g: deshadowed image with every valid instance's shadow pasted back."""
    data = _scene(manifest_or_data=manifest)
    masks = [data.shadow_masks[inst.instance_id] for inst in data.manifest.valid_instances()]
    return region_replace(data.deshadowed, data.real, mask_union(masks))


def background_shadow_mask(data: SceneData, fg_index: int) -> BinaryMask:
    valid = [inst.instance_id for inst in data.manifest.valid_instances()]
    others = [data.shadow_masks[i] for i in valid if i != fg_index]
    if not others:
        zeros = np.zeros_like(data.shadow_masks[fg_index].values)
        return BinaryMask(zeros)
    return mask_union(others)


def build_tuples(manifest: SceneManifest | SceneData) -> list[tuple[int, ShadowTuple]]:
    """One (instance_id, ShadowTuple) per valid instance; aborts on invariant breakage."""
    data = _scene(manifest_or_data=manifest)
    target = synthesize_ground_truth(data)
    out = []
    for inst in data.manifest.valid_instances():
        t = ShadowTuple(
            composite=synthesize_composite(data, inst.instance_id),
            fg_object=data.object_masks[inst.instance_id],
            fg_shadow=data.shadow_masks[inst.instance_id],
            bg_shadow=background_shadow_mask(data, inst.instance_id),
            target=target,
        )
        report = validate_tuple(t)
        if not report.passed:
            raise DatasetError(
                f"scene {data.manifest.scene_id} instance {inst.instance_id}: "
                + "; ".join(report.reasons))
        out.append((inst.instance_id, t))
    return out


def validate_tuple(t: ShadowTuple, min_shadow_area: int = 4) -> ValidationReport:
    """Machine-checkable tuple screening; reports reasons instead of raising."""
    reasons: list[str] = []
    shapes = {
        "composite": (t.composite.height, t.composite.width),
        "fg_object": (t.fg_object.height, t.fg_object.width),
        "fg_shadow": (t.fg_shadow.height, t.fg_shadow.width),
        "bg_shadow": (t.bg_shadow.height, t.bg_shadow.width),
        "target": (t.target.height, t.target.width),
    }
    if len(set(shapes.values())) > 1:
        reasons.append(f"dimension mismatch: {shapes}")
        return ValidationReport(False, reasons)
    for name, mask in (("fg_object", t.fg_object), ("fg_shadow", t.fg_shadow),
                       ("bg_shadow", t.bg_shadow)):
        if mask.soft:
            reasons.append(f"{name} is soft, expected hard")
    area = t.fg_shadow.area()
    if area == 0:
        reasons.append("empty foreground shadow")
    elif area < min_shadow_area:
        reasons.append(f"foreground shadow area {area} below minimum {min_shadow_area}")
    if t.fg_object.area() == 0:
        reasons.append("empty foreground object")
    outside = t.fg_shadow.values == 0.0
    diff = (t.composite.pixels != t.target.pixels).any(axis=2) & outside
    if diff.any():
        r, c = np.argwhere(diff)[0]
        reasons.append(f"composite differs from target outside the foreground shadow at pixel ({r}, {c})")
    return ValidationReport(not reasons, reasons)


# ---------------------------------------------------------------------------
# on-disk tuple layout: <scene>/<instance>/{composite,fg_object,fg_shadow,bg_shadow,target}.png

TUPLE_FILES = ("composite", "fg_object", "fg_shadow", "bg_shadow", "target")


def write_tuple(t: ShadowTuple, directory: Path):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_image(t.composite, directory / "composite.png")
    save_mask(t.fg_object, directory / "fg_object.png")
    save_mask(t.fg_shadow, directory / "fg_shadow.png")
    save_mask(t.bg_shadow, directory / "bg_shadow.png")
    save_image(t.target, directory / "target.png")


def read_tuple(directory: Path) -> ShadowTuple:
    directory = Path(directory)
    missing = [name for name in TUPLE_FILES if not (directory / f"{name}.png").exists()]
    if missing:
        raise DatasetError(f"{directory}: missing tuple files {missing}")
    return ShadowTuple(
        composite=load_image(directory / "composite.png"),
        fg_object=load_mask(directory / "fg_object.png"),
        fg_shadow=load_mask(directory / "fg_shadow.png"),
        bg_shadow=load_mask(directory / "bg_shadow.png"),
        target=load_image(directory / "target.png"),
    )


def tuple_dirs(root: Path) -> list[Path]:
    """All <scene>/<instance> directories under root, sorted for determinism."""
    root = Path(root)
    out = []
    for scene_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for inst_dir in sorted(p for p in scene_dir.iterdir() if p.is_dir()):
            if (inst_dir / "composite.png").exists():
                out.append(inst_dir)
    return out
