"""Scene manifests: per-scene JSON records pointing at images and masks."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..imaging import BinaryMask, ImageRGB, load_image, load_mask


class DatasetError(ValueError):
    """Raised for malformed manifests or broken tuple invariants."""


@dataclass(frozen=True)
class InstanceRecord:
    instance_id: int
    object_mask: str
    shadow_mask: str
    valid: bool


@dataclass(frozen=True)
class SceneManifest:
    """One scene: a real image, its deshadowed counterpart, and object-shadow instances.

    Paths are stored relative to ``root`` (the scene directory).
    """

    scene_id: str
    real_image: str
    deshadowed_image: str
    instances: tuple[InstanceRecord, ...]
    root: Path

    def valid_instances(self) -> list[InstanceRecord]:
        return [inst for inst in self.instances if inst.valid]

    def path(self, rel: str) -> Path:
        return self.root / rel


def save_manifest(manifest: SceneManifest, path: Path | None = None):
    path = path or (manifest.root / "manifest.json")
    doc = {
        "scene_id": manifest.scene_id,
        "real_image": manifest.real_image,
        "deshadowed_image": manifest.deshadowed_image,
        "instances": [
            {
                "instance_id": inst.instance_id,
                "object_mask": inst.object_mask,
                "shadow_mask": inst.shadow_mask,
                "valid": inst.valid,
            }
            for inst in manifest.instances
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_manifest(path) -> SceneManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: not valid JSON ({exc})") from exc
    try:
        instances = tuple(
            InstanceRecord(
                instance_id=int(d["instance_id"]),
                object_mask=d["object_mask"],
                shadow_mask=d["shadow_mask"],
                valid=bool(d["valid"]),
            )
            for d in doc["instances"]
        )
        manifest = SceneManifest(
            scene_id=str(doc["scene_id"]),
            real_image=doc["real_image"],
            deshadowed_image=doc["deshadowed_image"],
            instances=instances,
            root=path.parent,
        )
    except KeyError as exc:
        raise DatasetError(f"{path}: missing manifest key {exc}") from exc
    return manifest


@dataclass
class SceneData:
    """Decoded scene contents, checked against the manifest invariants."""

    manifest: SceneManifest
    real: ImageRGB
    deshadowed: ImageRGB
    object_masks: dict[int, BinaryMask]
    shadow_masks: dict[int, BinaryMask]


def load_scene(manifest: SceneManifest) -> SceneData:
    """Load and validate a scene's images and masks.

    Raises:
        DatasetError: no valid instance, dimension mismatch, empty masks on a
            valid instance, or unreadable files.
    """
    if not manifest.valid_instances():
        raise DatasetError(f"scene {manifest.scene_id}: no valid instance")
    real = load_image(manifest.path(manifest.real_image))
    deshadowed = load_image(manifest.path(manifest.deshadowed_image))
    if (real.height, real.width) != (deshadowed.height, deshadowed.width):
        raise DatasetError(
            f"scene {manifest.scene_id}: real {real.height}x{real.width} vs "
            f"deshadowed {deshadowed.height}x{deshadowed.width}")
    object_masks: dict[int, BinaryMask] = {}
    shadow_masks: dict[int, BinaryMask] = {}
    for inst in manifest.instances:
        om = load_mask(manifest.path(inst.object_mask))
        sm = load_mask(manifest.path(inst.shadow_mask))
        for name, m in (("object", om), ("shadow", sm)):
            if (m.height, m.width) != (real.height, real.width):
                raise DatasetError(
                    f"scene {manifest.scene_id} instance {inst.instance_id}: "
                    f"{name} mask is {m.height}x{m.width}, scene is {real.height}x{real.width}")
        if inst.valid and (om.area() == 0 or sm.area() == 0):
            raise DatasetError(
                f"scene {manifest.scene_id} instance {inst.instance_id}: "
                f"valid instance with an empty mask")
        object_masks[inst.instance_id] = om
        shadow_masks[inst.instance_id] = sm
    return SceneData(manifest, real, deshadowed, object_masks, shadow_masks)
