import numpy as np
import pytest

from shadowlab.diffusion.networks import (
    ControlEncoder,
    Denoiser,
    DenoiserConfig,
    IntensityEncoder,
    MaskHead,
)
from shadowlab.numerics import ShapeError, Tensor, backward, no_grad, tsum

CFG = DenoiserConfig(base_channels=8, depth=2, image_size=16, time_dim=8)


@pytest.fixture
def nets():
    rng = np.random.default_rng(0)
    den = Denoiser(CFG, rng)
    ctl = ControlEncoder(den, rng)
    return den, ctl


class TestDenoiser:
    def test_output_shapes(self, nets):
        den, _ = nets
        z = Tensor(np.random.default_rng(1).standard_normal((2, 3, 16, 16)))
        with no_grad():
            out, feats = den(z, t=3)
        assert out.shape == (2, 3, 16, 16)
        # decoder features come out deepest level first
        assert [f.shape[1] for f in feats] == den.feature_channels() == [16, 8]
        assert [f.shape[2] for f in feats] == [8, 16]

    def test_config_validation(self):
        with pytest.raises(ValueError, match="not divisible"):
            DenoiserConfig(image_size=20, depth=3)
        with pytest.raises(ValueError, match="multiple of 8"):
            DenoiserConfig(base_channels=12)
        with pytest.raises(ValueError, match="even"):
            DenoiserConfig(time_dim=7)

    def test_rejects_wrong_resolution(self, nets):
        den, _ = nets
        with pytest.raises(ShapeError):
            den(Tensor(np.zeros((1, 3, 8, 8))), t=0)

    def test_rejects_wrong_injection_count(self, nets):
        den, _ = nets
        z = Tensor(np.zeros((1, 3, 16, 16)))
        with pytest.raises(ShapeError, match="injection"):
            den(z, t=0, injections=[Tensor(np.zeros((1, 8, 16, 16)))])

    def test_timestep_changes_output(self, nets):
        den, _ = nets
        z = Tensor(np.random.default_rng(2).standard_normal((1, 3, 16, 16)))
        with no_grad():
            a, _ = den(z, t=0)
            b, _ = den(z, t=150)
        assert not np.allclose(a.data, b.data)

    def test_deterministic_for_fixed_seed(self):
        z = np.random.default_rng(3).standard_normal((1, 3, 16, 16))
        outs = []
        for _ in range(2):
            den = Denoiser(CFG, np.random.default_rng(42))
            with no_grad():
                out, _ = den(Tensor(z), t=5)
            outs.append(out.data)
        np.testing.assert_array_equal(outs[0], outs[1])


class TestControlEncoder:
    def test_fresh_injections_are_exactly_zero(self, nets):
        """Zero-initialized 1x1 outputs: conditioning starts as a no-op."""
        den, ctl = nets
        rng = np.random.default_rng(4)
        cond = Tensor(rng.standard_normal((2, 4, 16, 16)))
        z = Tensor(rng.standard_normal((2, 3, 16, 16)))
        with no_grad():
            injections = ctl(cond, z, t=7)
        assert len(injections) == CFG.depth + 1
        for inj in injections:
            assert (inj.data == 0.0).all()

    def test_injected_denoiser_matches_plain_at_init(self, nets):
        den, ctl = nets
        rng = np.random.default_rng(5)
        cond = Tensor(rng.standard_normal((1, 4, 16, 16)))
        z = Tensor(rng.standard_normal((1, 3, 16, 16)))
        with no_grad():
            plain, _ = den(z, t=2)
            injected, _ = den(z, t=2, injections=ctl(cond, z, t=2))
        np.testing.assert_array_equal(plain.data, injected.data)

    def test_copy_is_independent_of_source(self, nets):
        den, ctl = nets
        w = den.down_blocks[0].conv.weight
        before = ctl.blocks[0].conv.weight.data.copy()
        w.data += 1.0
        np.testing.assert_array_equal(ctl.blocks[0].conv.weight.data, before)

    def test_condition_gradient_flows_through_zero_convs(self, nets):
        den, ctl = nets
        rng = np.random.default_rng(6)
        cond = Tensor(rng.standard_normal((1, 4, 16, 16)))
        z = Tensor(rng.standard_normal((1, 3, 16, 16)))
        out, _ = den(z, t=1, injections=ctl(cond, z, t=1))
        backward(tsum(out * out))
        # zero convs output 0 but their weight gradients must be live
        g = ctl.zero_convs[0].weight.grad
        assert g is not None and np.abs(g).max() > 0.0

    def test_input_validation(self, nets):
        _, ctl = nets
        with pytest.raises(ShapeError):
            ctl(Tensor(np.zeros((1, 3, 16, 16))), Tensor(np.zeros((1, 3, 16, 16))), t=0)
        with pytest.raises(ShapeError):
            ctl(Tensor(np.zeros((1, 4, 16, 16))), Tensor(np.zeros((2, 3, 16, 16))), t=0)


class TestMaskHead:
    def test_untrained_head_outputs_half(self, nets):
        den, _ = nets
        rng = np.random.default_rng(7)
        head = MaskHead(den.feature_channels(), rng)
        feats = [Tensor(rng.standard_normal((1, 16, 8, 8))),
                 Tensor(rng.standard_normal((1, 8, 16, 16)))]
        fg = Tensor((rng.random((1, 1, 16, 16)) > 0.5).astype(np.float64))
        with no_grad():
            pred = head(feats, fg)
        assert pred.shape == (1, 1, 16, 16)
        np.testing.assert_array_equal(pred.data, np.full((1, 1, 16, 16), 0.5))

    def test_output_always_in_unit_interval(self, nets):
        den, _ = nets
        rng = np.random.default_rng(8)
        head = MaskHead(den.feature_channels(), rng)
        for p in head.parameters():  # knock it away from the zero init
            p.data += rng.standard_normal(p.data.shape) * 0.5
        feats = [Tensor(rng.standard_normal((1, 16, 8, 8)) * 5),
                 Tensor(rng.standard_normal((1, 8, 16, 16)) * 5)]
        fg = Tensor(np.ones((1, 1, 16, 16)))
        with no_grad():
            pred = head(feats, fg)
        # extreme logits may round to the interval endpoints in float64
        assert np.isfinite(pred.data).all()
        assert pred.data.min() >= 0.0 and pred.data.max() <= 1.0

    def test_rejects_unreachable_resolution(self, nets):
        den, _ = nets
        head = MaskHead(den.feature_channels(), np.random.default_rng(9))
        feats = [Tensor(np.zeros((1, 16, 6, 6))), Tensor(np.zeros((1, 8, 16, 16)))]
        with pytest.raises(ShapeError):
            head(feats, Tensor(np.zeros((1, 1, 16, 16))))
        with pytest.raises(ValueError):
            head([], Tensor(np.zeros((1, 1, 16, 16))))


class TestIntensityEncoder:
    def test_untrained_encoder_is_identity_modulation(self):
        enc = IntensityEncoder(np.random.default_rng(10))
        cond = Tensor(np.random.default_rng(11).standard_normal((2, 4, 16, 16)))
        with no_grad():
            params = enc(cond)
        np.testing.assert_array_equal(params.s.data, np.ones((2, 3)))
        np.testing.assert_array_equal(params.b.data, np.zeros((2, 3)))

    def test_input_shape_checked(self):
        enc = IntensityEncoder(np.random.default_rng(12))
        with pytest.raises(ShapeError):
            enc(Tensor(np.zeros((1, 3, 16, 16))))

    def test_depends_on_input_after_training_nudge(self):
        rng = np.random.default_rng(13)
        enc = IntensityEncoder(rng)
        enc.fc_scale.weight.data += rng.standard_normal(enc.fc_scale.weight.data.shape)
        a = Tensor(rng.standard_normal((1, 4, 16, 16)))
        b = Tensor(rng.standard_normal((1, 4, 16, 16)))
        with no_grad():
            pa, pb = enc(a), enc(b)
        assert not np.allclose(pa.s.data, pb.s.data)
