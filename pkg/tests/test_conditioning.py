"""Conditioning math: sin-cos position codes, the action MLP, adaptive
layer-norm modulation, and residual condition fusion.

Per axis with d channels, a position p maps to [sin(p * f_0..f_{h-1}),
cos(p * f_0..f_{h-1})] with f_j = 10000 ** (-j / h), h = d / 2; axes are
concatenated. AdaLN holds one (6D, D) head: the first 3D rows modulate
vision tokens from silu(temb + action_emb) per action chunk, the last 3D
rows modulate text tokens from silu(temb); each block splits into shift,
scale, gate and applies LN(x) * (1 + scale) + shift with a biased,
affine-free layer norm (eps 1e-5). Fusion projects concat(z, conds) and
adds it back onto z.
"""

from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from occ4d.actions import chunk_actions
from occ4d.conditioning import (
    AdaLNWeights,
    FusionWeights,
    MlpWeights,
    TokenLayout,
    action_embed,
    adaln_modulate,
    fuse_conditions,
    layer_norm,
    silu,
    sincos_pe,
)
from occ4d.exceptions import InputError

LN_EPS = 1e-5


def _ln_oracle(x: np.ndarray) -> np.ndarray:
    """Biased layer norm over the last axis, recomputed token by token."""
    out = np.empty_like(x, dtype=np.float64)
    flat = x.reshape(-1, x.shape[-1])
    out_flat = out.reshape(-1, x.shape[-1])
    for i, row in enumerate(flat):
        mu = row.mean()
        var = ((row - mu) ** 2).mean()
        out_flat[i] = (row - mu) / np.sqrt(var + LN_EPS)
    return out


def _adaln_oracle(hidden, text_hidden, temb, action_emb, weights):
    """Per-token recomputation of the modulation, one matmul per token."""
    b, s, d = hidden.shape
    s_a = action_emb.shape[1]
    num_patches = s // s_a
    w_vis, b_vis = weights.weight[: 3 * d], weights.bias[: 3 * d]
    w_txt, b_txt = weights.weight[3 * d :], weights.bias[3 * d :]

    out_hidden = np.empty_like(hidden, dtype=np.float64)
    gates = np.empty((b, s_a, d))
    for bi in range(b):
        for si in range(s):
            chunk = si // num_patches
            vec = silu(temb[bi] + action_emb[bi, chunk])
            mod = w_vis @ vec + b_vis
            shift, scale, gate = mod[:d], mod[d : 2 * d], mod[2 * d :]
            ln = _ln_oracle(hidden[bi, si][None, :])[0]
            out_hidden[bi, si] = ln * (1.0 + scale) + shift
            gates[bi, chunk] = gate

    out_text = np.empty_like(text_hidden, dtype=np.float64)
    text_gates = np.empty((b, d))
    for bi in range(b):
        mod = w_txt @ silu(temb[bi]) + b_txt
        shift, scale, gate = mod[:d], mod[d : 2 * d], mod[2 * d :]
        text_gates[bi] = gate
        for ti in range(text_hidden.shape[1]):
            ln = _ln_oracle(text_hidden[bi, ti][None, :])[0]
            out_text[bi, ti] = ln * (1.0 + scale) + shift
    return out_hidden, out_text, gates, text_gates


def _random_instance(rng, b=2, s_a=3, num_patches=4, d=8, s_txt=5):
    hidden = rng.normal(size=(b, s_a * num_patches, d))
    text_hidden = rng.normal(size=(b, s_txt, d))
    temb = rng.normal(size=(b, d))
    action_emb = rng.normal(size=(b, s_a, d))
    weights = AdaLNWeights.seeded(d, seed=int(rng.integers(1 << 16)))
    return hidden, text_hidden, temb, action_emb, weights


class TestSinCos:
    def test_position_zero(self):
        codes = sincos_pe(np.array([[0.0, 0.0]]), (4, 6))
        assert_allclose(codes[0, :2], 0.0)   # sin half, first axis
        assert_allclose(codes[0, 2:4], 1.0)  # cos half, first axis
        assert_allclose(codes[0, 4:7], 0.0)
        assert_allclose(codes[0, 7:10], 1.0)

    def test_identical_tuples_identical_rows(self, rng):
        pos = np.array([[3.0, 1.0], [3.0, 1.0], [2.0, 5.0]])
        codes = sincos_pe(pos, (4, 4))
        assert_allclose(codes[0], codes[1])
        assert np.abs(codes[0] - codes[2]).max() > 1e-6

    def test_dense_grid_rows_are_pairwise_distinct(self):
        """All 8 x 4 x 4 (t, x, y) tuples map to separated code rows."""
        positions = np.array(
            [[t, x, y] for t in range(8) for x in range(4) for y in range(4)],
            dtype=np.float64,
        )
        codes = sincos_pe(positions, (8, 4, 4))
        n = len(codes)
        min_gap = np.inf
        for i in range(n - 1):
            gaps = np.abs(codes[i + 1 :] - codes[i]).max(axis=1)
            min_gap = min(min_gap, gaps.min())
        assert min_gap > 1e-6

    def test_entries_stay_in_unit_interval(self, rng):
        codes = sincos_pe(rng.uniform(-50.0, 50.0, size=(20, 2)), (6, 8))
        assert codes.min() >= -1.0 and codes.max() <= 1.0

    def test_matches_direct_formula(self, rng):
        pos = rng.uniform(0.0, 10.0, size=(7, 2))
        codes = sincos_pe(pos, (4, 6))
        expected = []
        for row in pos:
            parts = []
            for axis, d in enumerate((4, 6)):
                half = d // 2
                freqs = 10000.0 ** (-np.arange(half) / half)
                parts.append(np.sin(row[axis] * freqs))
                parts.append(np.cos(row[axis] * freqs))
            expected.append(np.concatenate(parts))
        assert_allclose(codes, np.array(expected), atol=1e-12)

    def test_odd_axis_width_rejected(self):
        with pytest.raises(InputError):
            sincos_pe(np.zeros((1, 2)), (4, 5))


class TestActionEmbed:
    def test_zero_weights_zero_output(self, rng):
        w = MlpWeights(
            w1=np.zeros((6, 8)), b1=np.zeros(6), w2=np.zeros((4, 6)), b2=np.zeros(4)
        )
        out = action_embed(rng.normal(size=(3, 8)), w)
        assert out.shape == (3, 4)
        assert not out.any()

    def test_identity_layers_propagate_activation(self, rng):
        """w1 = w2 = I, zero biases: the embedding is silu(chunk)."""
        w = MlpWeights(w1=np.eye(5), b1=np.zeros(5), w2=np.eye(5), b2=np.zeros(5))
        chunk = rng.normal(size=(1, 5))
        assert_allclose(action_embed(chunk, w), silu(chunk), atol=1e-12)

    def test_rows_are_independent(self, rng):
        """Row i of a 3-chunk batch equals the single-chunk forward of row i."""
        w = MlpWeights.seeded(12, 6, seed=3)
        chunks = rng.normal(size=(3, 12))
        batch = action_embed(chunks, w)
        for i in range(3):
            single = action_embed(chunks[i : i + 1], w)
            assert_allclose(batch[i], single[0], atol=1e-12)

    def test_accepts_chunked_actions(self, rng):
        chunked = chunk_actions(rng.normal(size=(8, 3)), 4, 3)
        w = MlpWeights.seeded(12, 6, seed=0)
        assert_allclose(action_embed(chunked, w), action_embed(chunked.chunks, w))

    def test_width_mismatch_rejected(self, rng):
        w = MlpWeights.seeded(12, 6, seed=0)
        with pytest.raises(InputError):
            action_embed(rng.normal(size=(2, 11)), w)

    def test_seeded_weights_are_deterministic(self):
        a = MlpWeights.seeded(8, 4, seed=11)
        b = MlpWeights.seeded(8, 4, seed=11)
        assert_allclose(a.w1, b.w1)
        assert_allclose(a.b2, b.b2)


class TestLayerNorm:
    def test_token_statistics(self, rng):
        x = rng.normal(size=(4, 6, 16))
        out = layer_norm(x)
        mu = out.mean(axis=-1)
        var = out.var(axis=-1)
        assert np.abs(mu).max() < 1e-6
        assert np.abs(var - 1.0).max() < 1e-4

    def test_matches_per_token_oracle(self, rng):
        x = rng.normal(size=(3, 5, 8))
        assert_allclose(layer_norm(x), _ln_oracle(x), atol=1e-12)


class TestAdaLN:
    def test_zero_weights_reduce_to_layer_norm(self, rng):
        hidden = rng.normal(size=(2, 6, 8))
        text = rng.normal(size=(2, 4, 8))
        temb = rng.normal(size=(2, 8))
        action = rng.normal(size=(2, 3, 8))
        result = adaln_modulate(hidden, text, temb, action, AdaLNWeights.zeros(8))
        assert_allclose(result.hidden, layer_norm(hidden), atol=1e-12)
        assert_allclose(result.text_hidden, layer_norm(text), atol=1e-12)
        assert not result.gate.any()
        assert not result.text_gate.any()

    def test_zero_action_embedding_collapses_to_time_only(self, rng):
        """With action_emb = 0 every vision token sees the modulation driven
        by temb alone through the vision rows."""
        hidden, text, temb, _, weights = _random_instance(rng)
        b, s, d = hidden.shape
        zero_action = np.zeros((b, 3, d))
        result = adaln_modulate(hidden, text, temb, zero_action, weights)
        vec = silu(temb)  # (B, D)
        w_vis, b_vis = weights.weight[: 3 * d], weights.bias[: 3 * d]
        mod = vec @ w_vis.T + b_vis
        shift, scale = mod[:, :d], mod[:, d : 2 * d]
        expected = layer_norm(hidden) * (1.0 + scale[:, None, :]) + shift[:, None, :]
        assert_allclose(result.hidden, expected, atol=1e-10)

    def test_matches_per_token_oracle(self, rng):
        hidden, text, temb, action, weights = _random_instance(rng)
        result = adaln_modulate(hidden, text, temb, action, weights)
        exp_hidden, exp_text, exp_gate, exp_text_gate = _adaln_oracle(
            hidden, text, temb, action, weights
        )
        assert_allclose(result.hidden, exp_hidden, atol=1e-6)
        assert_allclose(result.text_hidden, exp_text, atol=1e-6)
        assert_allclose(result.gate, exp_gate, atol=1e-6)
        assert_allclose(result.text_gate, exp_text_gate, atol=1e-6)

    def test_chunk_locality(self, rng):
        """Tokens of chunk j never react to other chunks' hidden states or
        action rows."""
        hidden, text, temb, action, weights = _random_instance(rng)
        num_patches = hidden.shape[1] // action.shape[1]
        base = adaln_modulate(hidden, text, temb, action, weights)

        poked_hidden = hidden.copy()
        poked_hidden[:, num_patches:, :] += 10.0  # chunks 1..: perturbed
        poked_action = action.copy()
        poked_action[:, 1:, :] -= 5.0
        out = adaln_modulate(poked_hidden, text, temb, poked_action, weights)
        assert_allclose(
            out.hidden[:, :num_patches], base.hidden[:, :num_patches], atol=1e-12
        )
        assert_allclose(out.gate[:, 0], base.gate[:, 0], atol=1e-12)

    def test_scale_and_shift_jacobian_matches_finite_differences(self, rng):
        """d out / d bias is LN(h) on scale rows and 1 on shift rows."""
        hidden, text, temb, action, weights = _random_instance(rng, b=1, s_a=2, num_patches=2, d=4)
        d = 4
        ln = layer_norm(hidden)
        eps = 1e-4
        for row in [1, d + 2]:  # one shift row, one scale row
            chan = row % d
            up = AdaLNWeights(weights.weight, weights.bias + eps * np.eye(6 * d)[row])
            dn = AdaLNWeights(weights.weight, weights.bias - eps * np.eye(6 * d)[row])
            fd = (
                adaln_modulate(hidden, text, temb, action, up).hidden
                - adaln_modulate(hidden, text, temb, action, dn).hidden
            ) / (2 * eps)
            if row < d:
                expected = np.zeros_like(fd)
                expected[..., chan] = 1.0
            else:
                expected = np.zeros_like(fd)
                expected[..., chan] = ln[..., chan]
            denom = max(np.abs(expected).max(), 1.0)
            assert np.abs(fd - expected).max() / denom < 1e-4

    def test_token_count_must_be_multiple_of_chunks(self, rng):
        hidden = rng.normal(size=(1, 7, 4))  # 7 tokens, 3 chunks: no layout
        text = rng.normal(size=(1, 2, 4))
        temb = rng.normal(size=(1, 4))
        action = rng.normal(size=(1, 3, 4))
        with pytest.raises(InputError):
            adaln_modulate(hidden, text, temb, action, AdaLNWeights.zeros(4))


class TestFusion:
    def test_zero_projection_is_exact_identity(self, rng):
        z = rng.normal(size=(2, 5, 6))
        conds = [rng.normal(size=(2, 5, 4)), rng.normal(size=(2, 5, 3))]
        w = FusionWeights.zero_init(6, cond_dims=(4, 3))
        out = fuse_conditions(z, conds, w)
        assert np.array_equal(out, z)

    def test_identity_projection_doubles_input(self, rng):
        """No condition latents and an identity projector: out = z + I z."""
        z = rng.normal(size=(1, 4, 5))
        w = FusionWeights(proj_weight=np.eye(5), proj_bias=np.zeros(5))
        assert_allclose(fuse_conditions(z, [], w), 2.0 * z, atol=1e-12)

    def test_matches_dense_oracle(self, rng):
        z = rng.normal(size=(2, 3, 6))
        conds = [rng.normal(size=(2, 3, 2)), rng.normal(size=(2, 3, 5))]
        weight = rng.normal(size=(6, 13))
        bias = rng.normal(size=6)
        out = fuse_conditions(z, conds, FusionWeights(weight, bias))
        for bi in range(2):
            for si in range(3):
                stacked = np.concatenate([z[bi, si], conds[0][bi, si], conds[1][bi, si]])
                assert_allclose(out[bi, si], weight @ stacked + bias + z[bi, si], atol=1e-6)

    def test_condition_width_mismatch_rejected(self, rng):
        z = rng.normal(size=(1, 2, 4))
        w = FusionWeights.zero_init(4, cond_dims=(3,))
        with pytest.raises(InputError):
            fuse_conditions(z, [rng.normal(size=(1, 2, 2))], w)

    def test_projection_narrower_than_stream_rejected(self):
        with pytest.raises(InputError):
            FusionWeights(proj_weight=np.zeros((4, 3)), proj_bias=np.zeros(4))


class TestTokenLayout:
    def test_vision_token_count(self):
        layout = TokenLayout(batch=2, action_chunks=5, num_patches=600, text_tokens=77, dim=64)
        assert layout.vision_tokens == 3000

    def test_invalid_counts_rejected(self):
        with pytest.raises(InputError):
            TokenLayout(batch=0, action_chunks=1, num_patches=1, text_tokens=1, dim=8)
