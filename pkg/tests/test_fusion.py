"""Tests for the content encoder and gated dual cross-attention."""

import numpy as np
import pytest
from cases import ORACLE_C, ORACLE_P, ORACLE_S, dual_attention_problem, manual_dual_attention, oracle_module
from hypothesis import given, settings
from hypothesis import strategies as st

from svcflow.errors import AlignmentError, ConfigError, InputError, ShapeError
from svcflow.fusion import (
    ContentEncoder,
    DualAttention,
    FusionModel,
    align_frames,
    fuse_and_condition,
    upsample_frames,
)
from svcflow.features.melody import MelodySeries
from svcflow.nn import grad_check
from svcflow.nn.modules import sinusoidal_embedding
from svcflow.nn import ops as T
from svcflow.nn.tensor import Tensor


def small_attention(seed=0, **kw):
    return DualAttention(d_model=8, d_spk=4, d_melody=2, n_heads=2, rng=np.random.default_rng(seed), **kw)


def random_inputs(seed=0, frames=6, n_spk=3):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((frames, 8)), rng.standard_normal((n_spk, 4)), rng.standard_normal((frames, 2))


# ---------------------------------------------------------------------------
# Frame-rate helpers
# ---------------------------------------------------------------------------


class TestFrameHelpers:
    def test_upsample_doubles(self):
        x = np.arange(4.0)[:, None]
        up = upsample_frames(x, 2)
        assert up.shape == (8, 1)
        np.testing.assert_allclose(up[:, 0], [0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3])

    def test_upsample_constant_preserved(self):
        np.testing.assert_array_equal(upsample_frames(np.full((3, 2), 7.0)), np.full((6, 2), 7.0))

    def test_align_trims_and_pads(self):
        x = np.arange(5.0)[:, None]
        assert align_frames(x, 4).shape == (4, 1)
        np.testing.assert_array_equal(align_frames(x, 7)[-2:, 0], [4.0, 4.0])

    def test_align_tolerance(self):
        with pytest.raises(AlignmentError):
            align_frames(np.zeros((5, 1)), 10)


# ---------------------------------------------------------------------------
# Content encoder
# ---------------------------------------------------------------------------


class TestContentEncoder:
    def test_length_preserved(self):
        enc = ContentEncoder(d_in=6, d_model=8, n_blocks=2, n_heads=2, d_ff=16, kernel=3, rng=np.random.default_rng(0))
        assert enc(np.zeros((120, 6))).shape == (1, 120, 8)

    def test_frame_mismatch(self):
        enc = ContentEncoder(d_in=6, d_model=8, n_blocks=1, n_heads=2, d_ff=16, kernel=3, rng=np.random.default_rng(0))
        with pytest.raises(AlignmentError):
            enc(np.zeros((10, 6)), n_frames=12)

    def test_zeroed_outputs_leave_residual_path(self):
        enc = ContentEncoder(d_in=6, d_model=8, n_blocks=1, n_heads=2, d_ff=16, kernel=3, rng=np.random.default_rng(0))
        block = enc.blocks[0]
        for lin in (block.attn.wo, block.conv2):
            lin.weight.data[:] = 0.0
            lin.bias.data[:] = 0.0
        x = np.random.default_rng(1).standard_normal((5, 6))
        h = enc.in_proj(Tensor(x[None]))
        h = h + sinusoidal_embedding(np.arange(5), 8)
        expected = T.layer_norm(T.layer_norm(h)).data
        np.testing.assert_allclose(enc(x).data, expected, atol=1e-12)

    def test_bad_heads(self):
        with pytest.raises(ShapeError):
            ContentEncoder(d_in=6, d_model=6, n_blocks=1, n_heads=4, d_ff=8, kernel=3,
                           rng=np.random.default_rng(0))(np.zeros((3, 6)))


# ---------------------------------------------------------------------------
# Dual attention
# ---------------------------------------------------------------------------


class TestDualAttention:
    @pytest.mark.parametrize("alpha", [0.0, 0.7, 1.0, -2.0])
    def test_hand_built_oracle(self, alpha):
        out = oracle_module(alpha)(np.array(ORACLE_C), np.array(ORACLE_S), np.array(ORACLE_P)).data[0]
        ref, _ = manual_dual_attention(alpha)
        assert np.max(np.abs(out - ref)) < 1e-10

    def test_alpha_initialised_to_zero(self):
        assert small_attention().alpha.data.tolist() == [0.0]

    def test_zero_gate_is_melody_only(self):
        att = small_attention()
        c, s, p = random_inputs()
        out, maps = att(c, s, p, return_maps=True)
        assert out.data[0].tobytes() == maps.melody_term[0].tobytes()
        assert np.any(maps.speaker_term != 0)

    def test_gate_gradient_nonzero_at_zero(self):
        f, params, _ = dual_attention_problem(alpha=0.0)
        f().backward()
        assert abs(params["alpha"].grad[0]) > 0

    def test_softmax_rows_sum_to_one(self):
        att = small_attention()
        att.alpha.data[:] = 0.5
        _, maps = att(*random_inputs(), return_maps=True)
        np.testing.assert_allclose(maps.melody_weights.sum(-1), 1.0, atol=1e-6)
        np.testing.assert_allclose(maps.speaker_weights.sum(-1), 1.0, atol=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000), st.floats(min_value=0.1, max_value=100.0))
    def test_logits_bounded(self, seed, scale):
        att = small_attention(seed)
        c, s, p = random_inputs(seed)
        _, maps = att(c * scale, s * scale, p * scale, return_maps=True)
        assert np.abs(maps.melody_logits).max() <= 1 + 1e-6
        assert np.abs(maps.speaker_logits).max() <= 1 + 1e-6

    def test_single_frame_melody(self):
        att = small_attention(melody_positions=False)
        c, s, p = random_inputs(frames=1)
        _, maps = att(c, s, p, return_maps=True)
        np.testing.assert_array_equal(maps.melody_weights, 1.0)
        np.testing.assert_allclose(maps.melody_term[0, 0], att.w_pv(Tensor(p)).data[0], atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_speaker_permutation_invariant(self, seed):
        att = small_attention(seed)
        att.alpha.data[:] = 0.8
        c, s, p = random_inputs(seed, n_spk=4)
        perm = np.random.default_rng(seed).permutation(4)
        a = att(c, s, p).data
        b = att(c, s[perm], p).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_missing_speaker(self):
        c, _, p = random_inputs()
        with pytest.raises(InputError):
            small_attention()(c, None, p)
        with pytest.raises(InputError):
            small_attention()(c, np.zeros((0, 4)), p)

    def test_frame_mismatch(self):
        c, s, p = random_inputs()
        with pytest.raises(AlignmentError):
            small_attention()(c, s, p[:-1])

    def test_speaker_branch_off(self):
        att = small_attention()
        att.alpha.data[:] = 1.0
        c, s, p = random_inputs()
        _, maps = att(c, None, p, use_speaker=False, return_maps=True)
        assert maps.speaker_term is None

    def test_per_head_gate(self):
        att = small_attention(gate_per_head=True)
        assert att.alpha.shape == (2,)
        assert att(*random_inputs()).shape == (1, 6, 8)

    def test_batched_content(self):
        att = small_attention()
        rng = np.random.default_rng(3)
        out = att(rng.standard_normal((3, 5, 8)), rng.standard_normal((2, 4)), rng.standard_normal((3, 5, 2)))
        assert out.shape == (3, 5, 8)


# ---------------------------------------------------------------------------
# Fusion model and condition
# ---------------------------------------------------------------------------


class TestFusionModel:
    def make(self, ablation="none", **kw):
        return FusionModel(d_ssl=6, d_model=8, d_spk=4, n_blocks=1, n_heads=2, d_ff=16, kernel=3,
                           ablation=ablation, rng=np.random.default_rng(0), **kw)

    @pytest.mark.parametrize("ablation", ["none", "no-spk", "no-att"])
    def test_ablation_shapes(self, ablation):
        rng = np.random.default_rng(1)
        out = self.make(ablation)(rng.standard_normal((10, 6)), rng.standard_normal((3, 4)),
                                  rng.standard_normal((10, 2)))
        assert out.shape == (1, 10, 8)

    def test_unknown_ablation(self):
        with pytest.raises(ConfigError):
            self.make("no-melody")

    def test_no_spk_ignores_speaker(self):
        rng = np.random.default_rng(2)
        m, p = rng.standard_normal((10, 6)), rng.standard_normal((10, 2))
        model = self.make("no-spk")
        a = model(m, rng.standard_normal((3, 4)), p).data
        b = model(m, None, p).data
        np.testing.assert_array_equal(a, b)

    def test_residual_is_content_plus_attention(self):
        rng = np.random.default_rng(3)
        m, s, p = rng.standard_normal((10, 6)), rng.standard_normal((3, 4)), rng.standard_normal((10, 2))
        model = self.make()
        c = model.encoder(m, n_frames=10)
        expected = c.data + model.attention(c, s, p).data
        np.testing.assert_allclose(model(m, s, p).data, expected, atol=1e-12)
        model.residual = False
        np.testing.assert_allclose(model(m, s, p).data, expected - c.data, atol=1e-12)

    def test_fuse_and_condition_channels(self):
        rng = np.random.default_rng(4)
        mel = MelodySeries(rng.uniform(100, 300, 7), rng.uniform(-50, -10, 7))
        out = fuse_and_condition(np.zeros((7, 256)), mel)
        assert out.shape == (7, 258)
        np.testing.assert_array_equal(out.data[:, :256], 0.0)
        np.testing.assert_array_equal(out.data[:, 256:], mel.condition_channels())

    def test_fuse_and_condition_batched(self):
        out = fuse_and_condition(np.zeros((2, 5, 4)), np.ones((5, 2)))
        assert out.shape == (2, 5, 6)

    def test_fuse_and_condition_mismatch(self):
        with pytest.raises(AlignmentError):
            fuse_and_condition(np.zeros((5, 4)), np.ones((6, 2)))

    def test_gradients_through_fusion(self):
        f, params, _ = dual_attention_problem()
        report = grad_check(f, params)
        assert report.passed, report.summary()
