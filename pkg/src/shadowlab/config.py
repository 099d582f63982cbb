"""Run configuration: JSON in, validated dataclasses out."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .dataset.toy import ToySceneConfig


class ConfigError(ValueError):
    """Raised for unreadable, malformed, or out-of-range configuration."""


def default_dilation_radius(image_size: int) -> int:
    return max(2, round(0.03 * image_size))


@dataclass(frozen=True)
class TrainingConfig:
    """Diffusion training hyperparameters; JSON keys match field names,
    except ``lambda`` which maps to ``lam``."""

    T: int = 200
    beta_min: float = 1e-4
    beta_max: float = 0.02
    w: float = 10.0
    sigma: float = 0.7
    lam: float = 1.0
    dilation_radius: int | None = None
    lr: float = 1e-4
    steps: int = 5000
    batch: int = 8
    seed: int = 0
    image_size: int = 64

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if not 0.0 < self.beta_min <= self.beta_max < 1.0:
            raise ConfigError(f"need 0 < beta_min <= beta_max < 1, got {self.beta_min}, {self.beta_max}")
        if self.w < 1.0:
            raise ConfigError(f"w must be >= 1, got {self.w}")
        if not 0.0 < self.sigma <= 1.0:
            raise ConfigError(f"sigma must lie in (0, 1], got {self.sigma}")
        if self.lam < 0.0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.dilation_radius is not None and self.dilation_radius < 1:
            raise ConfigError(f"dilation_radius must be >= 1, got {self.dilation_radius}")
        if self.lr <= 0.0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.steps < 1 or self.batch < 1:
            raise ConfigError(f"steps and batch must be >= 1, got {self.steps}, {self.batch}")
        if self.image_size % 8 != 0 or self.image_size < 16:
            raise ConfigError(f"image_size must be a multiple of 8 and >= 16, got {self.image_size}")

    @property
    def radius(self) -> int:
        if self.dilation_radius is not None:
            return self.dilation_radius
        return default_dilation_radius(self.image_size)

    def to_json_dict(self) -> dict:
        return {
            "T": self.T, "beta_min": self.beta_min, "beta_max": self.beta_max,
            "w": self.w, "sigma": self.sigma, "lambda": self.lam,
            "dilation_radius": self.radius, "lr": self.lr, "steps": self.steps,
            "batch": self.batch, "seed": self.seed, "image_size": self.image_size,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TrainingConfig":
        known = {"T", "beta_min", "beta_max", "w", "sigma", "lambda",
                 "dilation_radius", "lr", "steps", "batch", "seed", "image_size"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        kwargs = {k: v for k, v in doc.items() if k != "lambda"}
        if "lambda" in doc:
            kwargs["lam"] = doc["lambda"]
        return cls(**kwargs)


@dataclass(frozen=True)
class ToyDatasetConfig:
    n_train: int = 500
    n_test: int = 50
    scene: ToySceneConfig = field(default_factory=ToySceneConfig)

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError(f"n_train and n_test must be >= 1, got {self.n_train}, {self.n_test}")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data_root: Path = Path("data")
    output_root: Path = Path("out")
    checkpoint: Path | None = None
    diffusion: TrainingConfig = field(default_factory=TrainingConfig)
    toy: ToyDatasetConfig = field(default_factory=ToyDatasetConfig)
    eval_k: int = 5

    def __post_init__(self):
        if self.eval_k < 1:
            raise ConfigError(f"eval k must be >= 1, got {self.eval_k}")

    @property
    def checkpoint_path(self) -> Path:
        return self.checkpoint if self.checkpoint is not None else self.output_root / "model.shlb"


def _build_toy(doc: dict, image_size: int) -> ToyDatasetConfig:
    known = {"n_train", "n_test", "min_objects", "max_objects", "azimuth_deg",
             "elevation_deg", "intensity", "min_shadow_area"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown toy config keys: {sorted(unknown)}")
    scene_kwargs = {k: tuple(v) if isinstance(v, list) else v
                    for k, v in doc.items() if k not in ("n_train", "n_test")}
    try:
        scene = ToySceneConfig(image_size=image_size, **scene_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return ToyDatasetConfig(
        n_train=doc.get("n_train", 500),
        n_test=doc.get("n_test", 50),
        scene=scene,
    )


def load_run_config(path, seed_override: int | None = None,
                    out_override: str | None = None) -> RunConfig:
    """Parse and validate a run config JSON file.

    ``--seed`` and ``--out`` command-line overrides are applied here so every
    subcommand shares the same precedence rules.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})")
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top-level JSON value must be an object")
    known = {"seed", "paths", "diffusion", "toy", "eval"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{path}: unknown config sections: {sorted(unknown)}")

    seed = seed_override if seed_override is not None else int(doc.get("seed", 0))
    paths = doc.get("paths", {})
    unknown = set(paths) - {"data_root", "output_root", "checkpoint"}
    if unknown:
        raise ConfigError(f"{path}: unknown path keys: {sorted(unknown)}")
    data_root = Path(paths.get("data_root", "data"))
    output_root = Path(out_override) if out_override else Path(paths.get("output_root", "out"))
    checkpoint = Path(paths["checkpoint"]) if "checkpoint" in paths else None

    diff_doc = dict(doc.get("diffusion", {}))
    diff_doc.setdefault("seed", seed)
    try:
        diffusion = TrainingConfig.from_json_dict(diff_doc)
        toy = _build_toy(doc.get("toy", {}), diffusion.image_size)
        eval_doc = doc.get("eval", {})
        unknown = set(eval_doc) - {"k"}
        if unknown:
            raise ConfigError(f"{path}: unknown eval keys: {sorted(unknown)}")
        return RunConfig(
            seed=seed,
            data_root=data_root,
            output_root=output_root,
            checkpoint=checkpoint,
            diffusion=diffusion,
            toy=toy,
            eval_k=int(eval_doc.get("k", 5)),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
