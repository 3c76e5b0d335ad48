"""Tests for token-reliability gating."""

import math

import numpy as np
import pytest

from douc.errors import ShapeError
from douc.gating import (
    GateConfig,
    GateReport,
    apply_gate,
    default_gate_layers,
    gate_weights,
    make_gate_hooks,
    og_dense_logits,
    reliability_scores,
)
from douc.tensor_ops import l2_normalize_rows
from douc.vit import TokenSequence, forward, project_to_joint_space
from helpers import random_block, random_tokens


def cfg(layers=(0,), alpha=0.5, temp=0.25):
    return GateConfig(layer_indices=tuple(layers), gate_strength=alpha, gate_temperature=temp)


class TestReliabilityScores:
    def test_three_four_five(self):
        tokens = np.zeros((2, 8), dtype=np.float32)
        tokens[1, 0], tokens[1, 1] = 3.0, 4.0
        s = reliability_scores(TokenSequence(tokens, 1, 1))
        np.testing.assert_allclose(s, [5.0], atol=1e-7)

    def test_zero_token(self):
        tokens = np.zeros((2, 4), dtype=np.float32)
        assert reliability_scores(TokenSequence(tokens, 1, 1))[0] == 0.0

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(40)
        x = random_tokens(rng, 2, 3, 8)
        s = reliability_scores(x)
        for i in range(6):
            want = math.sqrt(sum(float(v) ** 2 for v in x.tokens[i + 1]))
            assert abs(float(s[i]) - want) < 1e-6

    def test_cls_is_excluded(self):
        tokens = np.zeros((3, 4), dtype=np.float32)
        tokens[0] = 100.0
        tokens[1, 0] = 1.0
        s = reliability_scores(TokenSequence(tokens, 2, 1))
        np.testing.assert_allclose(s, [1.0, 0.0], atol=1e-7)


class TestGateWeights:
    def test_all_equal_scores_give_half(self):
        w = gate_weights(np.full(7, 3.3, dtype=np.float32), cfg())
        np.testing.assert_allclose(w, 0.5, atol=1e-7)

    def test_endpoints(self):
        t = 0.25
        w = gate_weights(np.array([1.0, 5.0], dtype=np.float32), cfg(temp=t))
        lo = 1.0 / (1.0 + math.exp(0.5 / t))
        hi = 1.0 / (1.0 + math.exp(-0.5 / t))
        np.testing.assert_allclose(w, [lo, hi], atol=1e-6)

    def test_monotone_on_random_vectors(self):
        rng = np.random.default_rng(41)
        config = cfg()
        for _ in range(1000):
            s = rng.uniform(0, 10, size=rng.integers(2, 12)).astype(np.float32)
            w = gate_weights(s, config)
            order = np.argsort(s, kind="stable")
            assert np.all(np.diff(w[order]) >= -1e-7)
            assert np.argmax(w) == np.argmax(s)

    def test_invariant_to_positive_rescaling(self):
        rng = np.random.default_rng(42)
        s = rng.uniform(0.1, 5.0, 9).astype(np.float32)
        a = gate_weights(s, cfg())
        b = gate_weights(s * 37.0, cfg())
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_open_interval(self):
        w = gate_weights(np.array([0.0, 1e6], dtype=np.float32), cfg(temp=0.05))
        assert np.all(w > 0.0) and np.all(w < 1.0)


class TestApplyGate:
    def test_alpha_zero_is_bit_exact_identity(self):
        rng = np.random.default_rng(43)
        x = random_tokens(rng)
        w = rng.uniform(0.01, 0.99, 4).astype(np.float32)
        out = apply_gate(x, w, alpha=0.0)
        assert np.array_equal(out.tokens, x.tokens)

    def test_full_alpha_unit_weight_keeps_token(self):
        rng = np.random.default_rng(44)
        x = random_tokens(rng)
        w = np.ones(4, dtype=np.float32)
        out = apply_gate(x, w, alpha=1.0)
        assert np.array_equal(out.tokens, x.tokens)

    def test_half_alpha_zero_weight_halves_token(self):
        rng = np.random.default_rng(45)
        x = random_tokens(rng)
        w = np.zeros(4, dtype=np.float32)
        out = apply_gate(x, w, alpha=0.5)
        np.testing.assert_array_equal(out.tokens[1:], x.tokens[1:] * np.float32(0.5))
        assert np.array_equal(out.tokens[0], x.tokens[0])

    def test_direction_preserved(self):
        rng = np.random.default_rng(46)
        x = random_tokens(rng, 2, 2, 8)
        w = rng.uniform(0, 1, 4).astype(np.float32)
        out = apply_gate(x, w, alpha=0.7)
        a = l2_normalize_rows(x.tokens[1:]).astype(np.float64)
        b = l2_normalize_rows(out.tokens[1:]).astype(np.float64)
        cos = (a * b).sum(axis=1)
        np.testing.assert_allclose(cos, 1.0, atol=1e-6)

    def test_attenuation_bounds(self):
        rng = np.random.default_rng(47)
        x = random_tokens(rng, 3, 3, 8)
        w = rng.uniform(0, 1, 9).astype(np.float32)
        alpha = 0.8
        out = apply_gate(x, w, alpha)
        before = np.linalg.norm(x.tokens[1:].astype(np.float64), axis=1)
        after = np.linalg.norm(out.tokens[1:].astype(np.float64), axis=1)
        assert np.all(after <= before * (1 + 1e-6))
        assert np.all(after >= before * (1 - alpha) * (1 - 1e-6))

    def test_length_mismatch(self):
        rng = np.random.default_rng(48)
        with pytest.raises(ShapeError):
            apply_gate(random_tokens(rng), np.ones(3, dtype=np.float32), 0.5)


class TestGateHooks:
    def test_hooks_fill_report_and_gate_layers(self):
        rng = np.random.default_rng(49)
        blocks = [random_block(rng) for _ in range(4)]
        x = random_tokens(rng)
        report = GateReport()
        hooks = make_gate_hooks(cfg(layers=(2, 3)), report)
        gated, _ = forward(x, blocks, hooks=hooks)
        plain, _ = forward(x, blocks)
        assert sorted(report.layers) == [2, 3]
        for s, w in report.layers.values():
            assert s.shape == (4,) and w.shape == (4,)
            assert np.all((w > 0) & (w < 1)) and np.all(s >= 0)
        assert not np.array_equal(gated.tokens, plain.tokens)
        assert np.array_equal(gated.tokens[0].shape, plain.tokens[0].shape)

    def test_default_gate_layers(self):
        assert default_gate_layers(12) == (9, 10, 11)
        assert default_gate_layers(2) == (1,)
        assert default_gate_layers(1) == (0,)


class TestOgDenseLogits:
    def _setup(self, rng, gh=2, gw=2, v=8, d=4, q=3):
        x = random_tokens(rng, gh, gw, v)
        gamma = rng.uniform(0.9, 1.1, v).astype(np.float32)
        beta = (rng.standard_normal(v) * 0.01).astype(np.float32)
        proj = (rng.standard_normal((v, d)) * 0.4).astype(np.float32)
        text = l2_normalize_rows(rng.standard_normal((q, d)).astype(np.float32))
        return x, gamma, beta, proj, text

    def test_query_equal_to_patch_embedding_scores_one(self):
        rng = np.random.default_rng(50)
        x, gamma, beta, proj, _ = self._setup(rng)
        z = project_to_joint_space(x, gamma, beta, proj)
        text = l2_normalize_rows(z[1:2])  # single query == first patch
        logits = og_dense_logits(x, gamma, beta, proj, text)
        assert logits.shape == (1, 2, 2)
        assert abs(float(logits[0, 0, 0]) - 1.0) < 1e-5
        assert np.all(logits <= 1.0 + 1e-6)

    def test_orthogonal_query_scores_zero(self):
        rng = np.random.default_rng(51)
        v, d = 8, 4
        x = random_tokens(rng, 1, 1, v)
        gamma = np.ones(v, dtype=np.float32)
        beta = np.zeros(v, dtype=np.float32)
        proj = np.zeros((v, d), dtype=np.float32)
        proj[0, 0] = 1.0  # patch projects onto axis 0
        text = np.zeros((1, d), dtype=np.float32)
        text[0, 1] = 1.0  # query on axis 1
        logits = og_dense_logits(x, gamma, beta, proj, text)
        assert abs(float(logits[0, 0, 0])) < 1e-6

    def test_values_are_cosines(self):
        rng = np.random.default_rng(52)
        x, gamma, beta, proj, text = self._setup(rng, 3, 2)
        logits = og_dense_logits(x, gamma, beta, proj, text)
        assert logits.shape == (3, 3, 2)
        assert np.all(logits >= -1.0 - 1e-6) and np.all(logits <= 1.0 + 1e-6)

    def test_patch_order_is_row_major(self):
        rng = np.random.default_rng(53)
        x, gamma, beta, proj, text = self._setup(rng, 2, 3, 8, 4, 2)
        logits = og_dense_logits(x, gamma, beta, proj, text)
        z = l2_normalize_rows(project_to_joint_space(x, gamma, beta, proj)[1:])
        flat = z @ text.T
        for p in range(6):
            r, c = divmod(p, 3)
            np.testing.assert_allclose(logits[:, r, c], flat[p], atol=1e-6)
