"""Batch and channel normalization: statistics handling and gradients."""

import numpy as np
import pytest

import oracles
from frnet import Tensor, batch_norm, channel_norm
from frnet.errors import ConfigError, DimensionError


def fresh_stats(c, dtype=np.float64):
    return {"mean": np.zeros(c, dtype), "var": np.ones(c, dtype)}


def affine(c, dtype=np.float64, gamma=1.0, beta=0.0):
    g = Tensor(np.full(c, gamma, dtype), requires_grad=True)
    b = Tensor(np.full(c, beta, dtype), requires_grad=True)
    return g, b


class TestBatchNorm:
    def test_constant_input_gives_beta(self):
        x = Tensor(np.full((2, 3, 4, 4), 7.0))
        g, b = affine(3, np.float32, beta=0.25)
        out = batch_norm(x, g, b, fresh_stats(3, np.float32), "train")
        assert np.allclose(out.data, 0.25, atol=1e-6)

    def test_standardized_input_passthrough(self):
        # Standardize with an independent routine first; bn(train) then acts
        # as identity up to the 1/sqrt(1 + eps) shrink its epsilon applies.
        rng = np.random.default_rng(0)
        raw = rng.standard_normal((4, 3, 8, 8))
        std = (raw - raw.mean(axis=(0, 2, 3), keepdims=True)) / raw.std(
            axis=(0, 2, 3), keepdims=True
        )
        g, b = affine(3)
        out = batch_norm(Tensor(std), g, b, fresh_stats(3), "train")
        expected = std / np.sqrt(1.0 + 1e-5)
        assert np.max(np.abs(out.data - expected)) < 1e-10
        # Identity up to eps: the shrink itself is bounded by |x| * eps / 2.
        assert np.max(np.abs(out.data - std)) < 4.0 * 1e-5 / 2.0

    def test_running_stats_converge_monotonically(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((2, 2, 6, 6)) + 3.0)
        g, b = affine(2)
        stats = fresh_stats(2)
        batch_mean = x.data.mean(axis=(0, 2, 3))
        gap0 = np.abs(stats["mean"] - batch_mean)
        batch_norm(x, g, b, stats, "train")
        gap1 = np.abs(stats["mean"] - batch_mean)
        batch_norm(x, g, b, stats, "train")
        gap2 = np.abs(stats["mean"] - batch_mean)
        assert np.all(gap1 < gap0)
        assert np.all(gap2 < gap1)

    def test_eval_before_training_uses_initial_stats(self):
        x = Tensor(np.array([[[[2.0]]]]))
        g, b = affine(1)
        out = batch_norm(x, g, b, fresh_stats(1), "eval")
        # mean 0, var 1: output is x / sqrt(1 + eps)
        assert abs(out.data[0, 0, 0, 0] - 2.0 / np.sqrt(1 + 1e-5)) < 1e-12

    def test_eval_uses_running_stats(self):
        stats = {"mean": np.array([1.0]), "var": np.array([4.0])}
        x = Tensor(np.full((1, 1, 2, 2), 3.0))
        g, b = affine(1, gamma=2.0, beta=0.5)
        out = batch_norm(x, g, b, stats, "eval")
        want = 2.0 * (3.0 - 1.0) / np.sqrt(4.0 + 1e-5) + 0.5
        assert np.allclose(out.data, want, atol=1e-12)

    def test_train_grads_match_numeric(self):
        # Element-wise weighted quadratic loss: the unweighted sum(out**2) has
        # an input grad that cancels to O(eps) and drowns in finite-diff noise.
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 2, 3, 3))
        gd = rng.uniform(0.5, 1.5, 2)
        bd = rng.standard_normal(2)
        w = rng.standard_normal((2, 2, 3, 3))

        def forward_np(xa, ga, ba):
            mu = xa.mean(axis=(0, 2, 3), keepdims=True)
            var = xa.var(axis=(0, 2, 3), keepdims=True)
            xh = (xa - mu) / np.sqrt(var + 1e-5)
            out = ga.reshape(1, 2, 1, 1) * xh + ba.reshape(1, 2, 1, 1)
            return (out * out * w).sum()

        xt = Tensor(x, requires_grad=True)
        g = Tensor(gd, requires_grad=True)
        b = Tensor(bd, requires_grad=True)
        out = batch_norm(xt, g, b, fresh_stats(2), "train")
        (out * out * Tensor(w)).sum().backward()
        num = oracles.numeric_grad(
            lambda: forward_np(x, gd, bd), {"x": x, "g": gd, "b": bd}, step=1e-6
        )
        assert oracles.relative_error(xt.grad, num["x"]) < 1e-5
        assert oracles.relative_error(g.grad, num["g"]) < 1e-5
        assert oracles.relative_error(b.grad, num["b"]) < 1e-5

    def test_mode_validated(self):
        x = Tensor(np.zeros((1, 1, 2, 2)))
        g, b = affine(1)
        with pytest.raises(ConfigError):
            batch_norm(x, g, b, fresh_stats(1), "inference")

    def test_shape_validated(self):
        g, b = affine(3)
        with pytest.raises(DimensionError):
            batch_norm(Tensor(np.zeros((1, 2, 2, 2))), g, b, fresh_stats(3), "train")


class TestChannelNorm:
    def test_two_channel_hand_case(self):
        # Channel vector (1, 3): mean 2, biased var 1. With the default
        # epsilon the exact output is +/- 1/sqrt(1 + 1e-5).
        x = np.zeros((1, 2, 2, 2))
        x[0, 0] = 1.0
        x[0, 1] = 3.0
        g, b = affine(2)
        out = channel_norm(Tensor(x), g, b)
        want = 1.0 / np.sqrt(1.0 + 1e-5)
        assert np.max(np.abs(out.data[0, 0] + want)) < 1e-6
        assert np.max(np.abs(out.data[0, 1] - want)) < 1e-6
        assert np.max(np.abs(out.data[0, 0] + 1.0)) < 1e-4

    def test_gamma_zero_gives_beta(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((2, 3, 4, 4)))
        g, b = affine(3, gamma=0.0, beta=0.6)
        out = channel_norm(x, g, b)
        assert np.allclose(out.data, 0.6, atol=1e-7)

    def test_single_channel_zero_variance_path(self):
        x = Tensor(np.full((1, 1, 3, 3), 5.0))
        g, b = affine(1, beta=0.1)
        out = channel_norm(x, g, b)
        assert np.allclose(out.data, 0.1, atol=1e-6)

    def test_batch_permutation_commutes(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((4, 3, 5, 5))
        g, b = affine(3)
        perm = np.array([2, 0, 3, 1])
        a = channel_norm(Tensor(x), g, b).data[perm]
        bo = channel_norm(Tensor(x[perm]), g, b).data
        assert np.array_equal(a, bo)

    def test_grads_match_numeric(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 3, 3, 2))
        gd = rng.uniform(0.5, 1.5, 3)
        bd = rng.standard_normal(3)

        def forward_np(xa, ga, ba):
            mu = xa.mean(axis=1, keepdims=True)
            var = xa.var(axis=1, keepdims=True)
            xh = (xa - mu) / np.sqrt(var + 1e-5)
            out = ga.reshape(1, 3, 1, 1) * xh + ba.reshape(1, 3, 1, 1)
            return (out * out).sum()

        xt = Tensor(x, requires_grad=True)
        g = Tensor(gd, requires_grad=True)
        b = Tensor(bd, requires_grad=True)
        out = channel_norm(xt, g, b)
        (out * out).sum().backward()
        num = oracles.numeric_grad(
            lambda: forward_np(x, gd, bd), {"x": x, "g": gd, "b": bd}, step=1e-6
        )
        assert oracles.relative_error(xt.grad, num["x"]) < 1e-5
        assert oracles.relative_error(g.grad, num["g"]) < 1e-5
        assert oracles.relative_error(b.grad, num["b"]) < 1e-5
