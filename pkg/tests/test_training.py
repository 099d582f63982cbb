"""Model-level training behavior: gating, logging, persistence, sampling."""

import csv
import json

import numpy as np
import pytest

from shadowlab.config import ConfigError, TrainingConfig
from shadowlab.dataset.records import load_manifest, load_scene
from shadowlab.dataset.synth import build_tuples
from shadowlab.dataset.toy import ToySceneConfig, generate_toy_scene
from shadowlab.diffusion.model import (
    ConditioningInput,
    ShadowDiffusionModel,
    TrainingDivergedError,
    write_loss_log,
)
from shadowlab.diffusion.model import LossRecord
from shadowlab.numerics import backward

SIZE = 16
FAST = dict(T=8, steps=3, batch=2, image_size=SIZE, seed=3)


@pytest.fixture(scope="module")
def tuples(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenes")
    cfg = ToySceneConfig(image_size=SIZE, min_objects=1, max_objects=2, margin=1,
                         min_shadow_area=4)
    out = []
    for seed in (21, 22):
        m = generate_toy_scene(seed, cfg, root / f"s{seed}", f"s{seed}")
        out.extend(t for _, t in build_tuples(load_scene(m)))
    return out


def fresh_model(**overrides):
    kw = dict(FAST)
    kw.update(overrides)
    return ShadowDiffusionModel(TrainingConfig(**kw))


def grads_of(net):
    return {k: p.grad for k, p in net.named_parameters().items()}


class TestGating:
    def _one_backward(self, model, tuples, t):
        model._build(init_seed=0)
        data = [model._prepare(tu) for tu in tuples]
        stacks = {k: np.stack([d[k] for d in data]) for k in data[0]}
        for p in model.named_parameters().values():
            p.requires_grad = True
            p.grad = np.zeros_like(p.data)
        rng = np.random.default_rng(0)
        eps = rng.standard_normal((2, 3, SIZE, SIZE))
        rec = model._step_losses(stacks, np.array([0, 1]), t, eps)
        backward(rec["_loss"])
        return rec

    def test_late_steps_leave_gated_heads_untouched(self, tuples):
        """At t >= sigma*T the mask and intensity branches get exactly zero grad."""
        model = fresh_model(sigma=0.5, T=10)
        rec = self._one_backward(model, tuples, t=5)
        assert rec["loss_mask"] is None
        for g in grads_of(model.mask_head_).values():
            assert (g == 0.0).all()
        for g in grads_of(model.intensity_).values():
            assert (g == 0.0).all()
        # the denoiser still learns
        assert any(np.abs(g).max() > 0 for g in grads_of(model.denoiser_).values())

    def test_early_steps_train_gated_heads(self, tuples):
        model = fresh_model(sigma=0.5, T=10)
        rec = self._one_backward(model, tuples, t=4)
        assert rec["loss_mask"] is not None
        assert any(np.abs(g).max() > 0 for g in grads_of(model.mask_head_).values())
        assert any(np.abs(g).max() > 0 for g in grads_of(model.intensity_).values())

    def test_modulation_off_keeps_intensity_frozen_even_when_gated_on(self, tuples):
        model = fresh_model(sigma=0.5, T=10)
        model.modulation = False
        rec = self._one_backward(model, tuples, t=2)
        assert rec["loss_mask"] is not None  # mask loss stays in the ablation
        for g in grads_of(model.intensity_).values():
            assert (g == 0.0).all()


class TestFit:
    def test_fit_records_and_logs(self, tuples, tmp_path):
        log = tmp_path / "loss_log.csv"
        model = fresh_model().fit(tuples, log_path=log)
        assert model.trained_
        assert len(model.losses_) == FAST["steps"]
        rows = list(csv.reader(log.open()))
        assert rows[0] == ["step", "L_mask", "L_mwsg", "L_all"]
        assert len(rows) == FAST["steps"] + 1
        for row, rec in zip(rows[1:], model.losses_):
            assert int(row[0]) == rec.step
            gated_off = rec.loss_mask is None
            assert (row[1] == "") == gated_off  # empty cell, not 0, when gated
            assert float(row[2]) == pytest.approx(rec.loss_mwsg)
            assert float(row[3]) == pytest.approx(rec.loss_all)

    def test_fit_is_deterministic(self, tuples):
        a = fresh_model().fit(tuples)
        b = fresh_model().fit(tuples)
        assert [r.loss_all for r in a.losses_] == [r.loss_all for r in b.losses_]
        for (ka, pa), (kb, pb) in zip(sorted(a.named_parameters().items()),
                                      sorted(b.named_parameters().items())):
            assert ka == kb
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_different_seed_changes_run(self, tuples):
        a = fresh_model(seed=3).fit(tuples)
        b = fresh_model(seed=4).fit(tuples)
        assert [r.loss_all for r in a.losses_] != [r.loss_all for r in b.losses_]

    def test_empty_fit_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            fresh_model().fit([])

    def test_wrong_resolution_tuple_rejected(self, tuples):
        model = fresh_model(image_size=32)
        with pytest.raises(ValueError, match="model expects 32x32"):
            model.fit(tuples)

    def test_divergence_raises_and_dumps(self, tuples, tmp_path, monkeypatch):
        model = fresh_model(steps=40)
        real = ShadowDiffusionModel._step_losses

        def poisoned(self, stacks, idx, t, eps):
            rec = real(self, stacks, idx, t, eps)
            if len(self.losses_) >= 2:  # third step goes bad
                rec["loss_all"] = float("nan")
            return rec

        monkeypatch.setattr(ShadowDiffusionModel, "_step_losses", poisoned)
        log = tmp_path / "loss_log.csv"
        with pytest.raises(TrainingDivergedError, match="non-finite loss at step 3"):
            model.fit(tuples, log_path=log)
        dump = tmp_path / "loss_log.diverged.json"
        assert dump.exists()
        doc = json.loads(dump.read_text())
        assert {"step", "t", "batch_indices", "loss_all"} <= set(doc)
        assert doc["step"] == 3


class TestSampling:
    def test_sample_shape_and_determinism(self, tuples):
        model = fresh_model().fit(tuples)
        t = tuples[0]
        r1 = model.sample_tuple(t, seed=11)
        r2 = model.sample_tuple(t, seed=11)
        assert r1.image.pixels.shape == (SIZE, SIZE, 3)
        assert r1.mask.soft and r1.mask.values.shape == (SIZE, SIZE)
        np.testing.assert_array_equal(r1.image.pixels, r2.image.pixels)
        np.testing.assert_array_equal(r1.mask.values, r2.mask.values)
        assert r1.trained and r1.seed == 11

    def test_seed_matters(self, tuples):
        model = fresh_model().fit(tuples)
        r1 = model.sample_tuple(tuples[0], seed=1)
        r2 = model.sample_tuple(tuples[0], seed=2)
        assert not np.array_equal(r1.image.pixels, r2.image.pixels)

    def test_untrained_sample_is_flagged(self, tuples):
        model = fresh_model()
        res = model.sample_tuple(tuples[0], seed=0)
        assert not res.trained

    def test_conditioning_validation(self, tuples):
        t = tuples[0]
        from shadowlab.imaging import BinaryMask
        small = BinaryMask(np.ones((4, 4)))
        with pytest.raises(ValueError):
            ConditioningInput(t.composite, small)


class TestPersistence:
    def test_save_load_round_trip_bitwise(self, tuples, tmp_path):
        model = fresh_model().fit(tuples)
        path = tmp_path / "model.shlb"
        model.save(path)
        clone = fresh_model().load(path)
        for k, p in model.named_parameters().items():
            np.testing.assert_array_equal(clone.named_parameters()[k].data, p.data)
        r1 = model.sample_tuple(tuples[0], seed=5)
        r2 = clone.sample_tuple(tuples[0], seed=5)
        np.testing.assert_array_equal(r1.image.pixels, r2.image.pixels)

    def test_save_before_fit_rejected(self, tmp_path):
        with pytest.raises(RuntimeError):
            fresh_model().save(tmp_path / "x.shlb")


class TestTrainingConfig:
    def test_json_round_trip_uses_lambda_key(self):
        cfg = TrainingConfig(lam=2.0, dilation_radius=3)
        doc = cfg.to_json_dict()
        assert doc["lambda"] == 2.0 and "lam" not in doc
        assert set(doc) == {"T", "beta_min", "beta_max", "w", "sigma", "lambda",
                            "dilation_radius", "lr", "steps", "batch", "seed", "image_size"}
        back = TrainingConfig.from_json_dict(doc)
        assert back == cfg

    def test_default_radius_scales_with_image_size(self):
        assert TrainingConfig(image_size=64).radius == 2
        assert TrainingConfig(image_size=256).radius == 8
        assert TrainingConfig(image_size=64, dilation_radius=5).radius == 5

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown training config keys"):
            TrainingConfig.from_json_dict({"TT": 3})

    @pytest.mark.parametrize("bad", [
        dict(T=0), dict(sigma=0.0), dict(sigma=1.5), dict(w=0.5),
        dict(lam=-1.0), dict(lr=0.0), dict(batch=0), dict(image_size=20),
        dict(dilation_radius=0), dict(beta_min=0.3, beta_max=0.2),
    ])
    def test_field_validation(self, bad):
        with pytest.raises(ConfigError):
            TrainingConfig(**bad)


class TestLossLog:
    def test_write_loss_log_formats_gated_rows(self, tmp_path):
        recs = [LossRecord(step=1, t=9, loss_mask=None, loss_mwsg=0.5, loss_all=0.5),
                LossRecord(step=2, t=1, loss_mask=0.25, loss_mwsg=0.5, loss_all=0.75)]
        p = tmp_path / "log.csv"
        write_loss_log(p, recs)
        text = p.read_text().splitlines()
        assert text[0] == "step,L_mask,L_mwsg,L_all"
        assert text[1].startswith("1,,")
        assert text[2].startswith("2,0.25,")
