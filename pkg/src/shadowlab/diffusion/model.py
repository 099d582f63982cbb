"""The trainable shadow-generation model: conditioning, training loop, sampler."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..base import ParamsMixin
from ..config import TrainingConfig
from ..dataset.synth import ShadowTuple
from ..imaging import BinaryMask, ImageRGB
from ..numerics import (
    Adam,
    Tensor,
    backward,
    load_checkpoint,
    no_grad,
    save_checkpoint,
)
from .losses import (
    build_weight_map,
    combined_loss,
    mask_loss,
    modulate_noise,
    weight_map_from_mask,
    weighted_noise_loss,
)
from .networks import ControlEncoder, Denoiser, DenoiserConfig, IntensityEncoder, MaskHead
from .schedule import decode_latent, encode_image, forward_diffuse, linear_schedule


class TrainingDivergedError(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


@dataclass(frozen=True)
class ConditioningInput:
    """What the control encoder sees: the composite and the object mask."""

    composite: ImageRGB
    fg_object: BinaryMask

    def __post_init__(self):
        if (self.composite.height, self.composite.width) != (self.fg_object.height, self.fg_object.width):
            raise ValueError("composite and fg_object dimensions differ")

    def to_array(self) -> np.ndarray:
        return np.concatenate([encode_image(self.composite.pixels),
                               self.fg_object.values[None, None]], axis=1)


@dataclass
class SampleResult:
    image: ImageRGB
    mask: BinaryMask
    trained: bool
    seed: int


@dataclass
class LossRecord:
    step: int
    t: int
    loss_mask: float | None
    loss_mwsg: float
    loss_all: float


def write_loss_log(path, records: list[LossRecord]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "L_mask", "L_mwsg", "L_all"])
        for rec in records:
            mask_cell = "" if rec.loss_mask is None else f"{rec.loss_mask:.9g}"
            writer.writerow([rec.step, mask_cell, f"{rec.loss_mwsg:.9g}", f"{rec.loss_all:.9g}"])


class ShadowDiffusionModel(ParamsMixin):
    """Conditional denoiser with control conditioning, mask head, intensity modulation.

    Follows the fit/sample estimator convention: hyperparameters in the
    constructor, learned state in trailing-underscore attributes.

    Args:
        config: training hyperparameters (schedule, loss weights, steps...).
        base_channels, depth, time_dim: denoiser architecture.
        modulation: apply intensity modulation (ablation switch).
        expansion: dilate the shadow mask for the weight map (ablation switch;
            off means the radius-0 variant).
    """

    def __init__(self, config: TrainingConfig | None = None, base_channels: int = 16,
                 depth: int = 3, time_dim: int = 32, modulation: bool = True,
                 expansion: bool = True):
        self.config = config if config is not None else TrainingConfig()
        self.base_channels = base_channels
        self.depth = depth
        self.time_dim = time_dim
        self.modulation = modulation
        self.expansion = expansion

    # -- construction -------------------------------------------------------

    def _build(self, init_seed: int):
        cfg = self.config
        rng = np.random.default_rng(np.random.SeedSequence(init_seed))
        arch = DenoiserConfig(base_channels=self.base_channels, depth=self.depth,
                              image_size=cfg.image_size, time_dim=self.time_dim)
        self.denoiser_ = Denoiser(arch, rng)
        self.control_ = ControlEncoder(self.denoiser_, rng)
        self.mask_head_ = MaskHead(self.denoiser_.feature_channels(), rng)
        self.intensity_ = IntensityEncoder(rng)
        self.sched_ = linear_schedule(cfg.T, cfg.beta_min, cfg.beta_max)
        self.trained_ = False

    def _nets(self):
        return {
            "denoiser": self.denoiser_,
            "control": self.control_,
            "mask_head": self.mask_head_,
            "intensity": self.intensity_,
        }

    def named_parameters(self) -> dict[str, Tensor]:
        self._check_fitted("denoiser_")
        out: dict[str, Tensor] = {}
        for prefix, net in self._nets().items():
            out.update(net.named_parameters(prefix + "."))
        return out

    # -- data preparation ----------------------------------------------------

    def _prepare(self, t: ShadowTuple) -> dict[str, np.ndarray]:
        s = self.config.image_size
        if (t.composite.height, t.composite.width) != (s, s):
            raise ValueError(
                f"tuple is {t.composite.height}x{t.composite.width}, model expects {s}x{s}")
        if self.expansion:
            wm = build_weight_map(t.fg_shadow, self.config.radius, self.config.w, model_size=s)
        else:
            wm = weight_map_from_mask(t.fg_shadow, self.config.w, model_size=s)
        return {
            "z0": encode_image(t.target.pixels)[0],
            "cond": ConditioningInput(t.composite, t.fg_object).to_array()[0],
            "icond": np.concatenate([encode_image(t.composite.pixels)[0],
                                     t.bg_shadow.values[None]], axis=0),
            "fg_object": t.fg_object.values[None],
            "fg_shadow": t.fg_shadow.values[None],
            "weight": wm.values[None],
        }

    # -- training ------------------------------------------------------------

    def fit(self, tuples: list[ShadowTuple], log_path=None,
            callback=None) -> "ShadowDiffusionModel":
        """Train on prepared tuples for ``config.steps`` optimizer steps.

        Raises:
            TrainingDivergedError: non-finite loss; a diagnostic dump of the
                offending batch goes next to ``log_path`` when given.
        """
        if not tuples:
            raise ValueError("fit needs at least one tuple")
        cfg = self.config
        seeds = np.random.SeedSequence(cfg.seed).spawn(2)
        self._build(init_seed=cfg.seed)
        rng = np.random.default_rng(seeds[1])
        data = [self._prepare(t) for t in tuples]
        stacks = {key: np.stack([d[key] for d in data]) for key in data[0]}
        optim = Adam(self.named_parameters(), lr=cfg.lr)
        self.losses_ = []
        n = len(data)
        for step in range(1, cfg.steps + 1):
            idx = rng.integers(0, n, size=cfg.batch)
            t = int(rng.integers(0, cfg.T))
            eps = rng.standard_normal((cfg.batch, 3, cfg.image_size, cfg.image_size))
            optim.zero_grad()
            record = self._step_losses(stacks, idx, t, eps)
            loss = record.pop("_loss")
            backward(loss)
            optim.step()
            rec = LossRecord(step=step, t=t, loss_mask=record["loss_mask"],
                             loss_mwsg=record["loss_mwsg"], loss_all=record["loss_all"])
            self.losses_.append(rec)
            if not np.isfinite(rec.loss_all):
                self._dump_divergence(log_path, rec, idx)
            if callback is not None:
                callback(rec)
        self.trained_ = True
        if log_path is not None:
            write_loss_log(log_path, self.losses_)
        return self

    def _step_losses(self, stacks, idx, t: int, eps: np.ndarray) -> dict:
        cfg = self.config
        z0 = Tensor(stacks["z0"][idx])
        cond = Tensor(stacks["cond"][idx])
        z_t = forward_diffuse(z0, t, Tensor(eps), self.sched_)
        injections = self.control_(cond, z_t, t)
        eps_tilde, feats = self.denoiser_(z_t, t, injections)

        gated_on = t < cfg.sigma * cfg.T
        lm = None
        eps_hat = eps_tilde
        if gated_on:
            fg_shadow = Tensor(stacks["fg_shadow"][idx])
            pred = self.mask_head_(feats, Tensor(stacks["fg_object"][idx]))
            lm = mask_loss(pred, fg_shadow)
            if self.modulation:
                params = self.intensity_(Tensor(stacks["icond"][idx]))
                eps_hat = modulate_noise(eps_tilde, params, fg_shadow)
        lw = weighted_noise_loss(Tensor(eps), eps_hat, Tensor(stacks["weight"][idx]))
        loss = combined_loss(lm, lw, cfg.lam)
        return {
            "_loss": loss,
            "loss_mask": None if lm is None else lm.item(),
            "loss_mwsg": lw.item(),
            "loss_all": loss.item(),
        }

    def _dump_divergence(self, log_path, rec: LossRecord, idx):
        info = {
            "step": rec.step, "t": rec.t, "batch_indices": [int(i) for i in idx],
            "loss_mask": rec.loss_mask, "loss_mwsg": rec.loss_mwsg, "loss_all": rec.loss_all,
        }
        where = ""
        if log_path is not None:
            dump = Path(log_path).with_suffix(".diverged.json")
            dump.write_text(json.dumps(info, indent=2) + "\n")
            where = f"; diagnostics written to {dump}"
        raise TrainingDivergedError(
            f"non-finite loss at step {rec.step} (t={rec.t}){where}")

    # -- sampling ------------------------------------------------------------

    def sample(self, cond: ConditioningInput, bg_shadow: BinaryMask, seed: int) -> SampleResult:
        """Generate one image by ancestral sampling from composite-noised z_T."""
        if not hasattr(self, "denoiser_"):
            self._build(init_seed=self.config.seed)
        cfg = self.config
        sched = self.sched_
        rng = np.random.default_rng(seed)
        ic = encode_image(cond.composite.pixels)
        cond_arr = cond.to_array()
        icond = np.concatenate([ic, bg_shadow.values[None, None]], axis=1)
        shape = ic.shape

        with no_grad():
            eps0 = rng.standard_normal(shape)
            z = forward_diffuse(ic, sched.T - 1, eps0, sched).data
            params = self.intensity_(Tensor(icond))
            fg_object = Tensor(cond.fg_object.values[None, None])
            mask_pred = None
            for tau in reversed(range(sched.T)):
                z_t = Tensor(z)
                injections = self.control_(Tensor(cond_arr), z_t, tau)
                eps_tilde, feats = self.denoiser_(z_t, tau, injections)
                if tau < cfg.sigma * sched.T:
                    mask_pred = self.mask_head_(feats, fg_object)
                    if self.modulation:
                        eps_hat = modulate_noise(eps_tilde, params, mask_pred)
                    else:
                        eps_hat = eps_tilde
                else:
                    eps_hat = eps_tilde
                beta = sched.beta[tau]
                abar = sched.alpha_bar[tau]
                z = (z - beta / np.sqrt(1.0 - abar) * eps_hat.data) / np.sqrt(1.0 - beta)
                if tau > 0:
                    abar_prev = sched.alpha_bar[tau - 1]
                    var = beta * (1.0 - abar_prev) / (1.0 - abar)
                    z = z + np.sqrt(var) * rng.standard_normal(shape)

        image = ImageRGB(decode_latent(z))
        mask = BinaryMask(np.clip(mask_pred.data[0, 0], 0.0, 1.0), soft=True)
        return SampleResult(image=image, mask=mask,
                            trained=bool(getattr(self, "trained_", False)), seed=seed)

    def sample_tuple(self, t: ShadowTuple, seed: int) -> SampleResult:
        return self.sample(ConditioningInput(t.composite, t.fg_object), t.bg_shadow, seed)

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        self._check_fitted("denoiser_")
        arrays = {name: p.data for name, p in self.named_parameters().items()}
        save_checkpoint(path, arrays)

    def load(self, path) -> "ShadowDiffusionModel":
        """Populate network weights from a checkpoint (architecture from self)."""
        state = load_checkpoint(path)
        self._build(init_seed=self.config.seed)
        for prefix, net in self._nets().items():
            sub = {k: v for k, v in state.items() if k.startswith(prefix + ".")}
            net.load_state(sub, prefix + ".")
        self.trained_ = True
        return self
