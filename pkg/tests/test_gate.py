import math

import numpy as np
import pytest

from vibnet.errors import DimensionError, InputError
from vibnet.gate import (EVAL_MEAN, LOG_SIGMA2_MAX, LOG_SIGMA2_MIN, TRAIN_SAMPLE, VibGate, alpha,
                         kl_penalty, psi_diagnostic)
from vibnet.tensor import RandomSource


def random_gate(rng, width=6, gamma=0.7, per_channel=False):
    return VibGate(rng.standard_normal(width), rng.uniform(width) * 4 - 3, gamma, per_channel)


def test_init_matches_documented_defaults():
    g = VibGate.init(10_000, RandomSource(0))
    assert abs(g.mu.mean() - 1) < 1e-3
    assert abs(g.mu.std() - 0.01) < 1e-3
    np.testing.assert_allclose(g.log_sigma2, math.log(0.01))
    np.testing.assert_allclose(g.alpha(), g.mu ** 2 / 0.01)


def test_eval_mean_hand_case_ignores_seed():
    g = VibGate([2.0, 0.0], [0.0, 0.0])
    f = np.array([[5.0, 7.0]])
    h1, _ = g.forward(f, EVAL_MEAN, RandomSource(1))
    h2, _ = g.forward(f, EVAL_MEAN, RandomSource(2))
    np.testing.assert_array_equal(h1, [[10.0, 0.0]])
    np.testing.assert_array_equal(h1, h2)


def test_noiseless_gate_is_exact_identity():
    g = VibGate.identity(4)
    f = RandomSource(3).standard_normal((5, 4))
    h, _ = g.forward(f, TRAIN_SAMPLE, RandomSource(0))
    np.testing.assert_array_equal(h, f)


def test_zero_mu_gives_exact_zero_in_eval_mode():
    g = VibGate([0.0, 1.5], [1.0, 1.0])
    h, _ = g.forward(np.array([[3.0, 2.0], [-1.0, 4.0]]), EVAL_MEAN)
    assert np.all(h[:, 0] == 0.0)


def test_train_sample_moments():
    rng = RandomSource(4)
    g = VibGate([0.5, 2.0, -1.0], np.log([0.3, 1.2, 0.05]))
    f = np.array([1.5, -2.0, 3.0])
    n = 100_000
    h, _ = g.forward(np.tile(f, (n, 1)), TRAIN_SAMPLE, rng)
    mean, var = g.mu * f, g.sigma2() * f ** 2
    se_mean = np.sqrt(var / n)
    se_var = var * np.sqrt(2.0 / (n - 1))
    assert np.all(np.abs(h.mean(axis=0) - mean) < 3 * se_mean)
    assert np.all(np.abs(h.var(axis=0, ddof=1) - var) < 3 * se_var)


def test_per_channel_noise_shared_across_positions():
    g = VibGate([1.0, 1.0], [0.0, 0.0], per_channel=True)
    h, _ = g.forward(np.ones((3, 2, 4, 4)), TRAIN_SAMPLE, RandomSource(5))
    for n in range(3):
        for c in range(2):
            assert np.all(h[n, c] == h[n, c, 0, 0])
    assert not np.allclose(h[0, 0, 0, 0], h[1, 0, 0, 0])


def test_per_batch_draw_shares_noise_across_examples():
    g = VibGate([1.0, 1.0], [0.0, 0.0])
    h, _ = g.forward(np.ones((4, 2)), TRAIN_SAMPLE, RandomSource(6), per_batch=True)
    assert np.all(h == h[0])


def test_width_mismatch_and_missing_rng():
    g = VibGate.init(3, RandomSource(0))
    with pytest.raises(DimensionError):
        g.forward(np.ones((2, 4)))
    with pytest.raises(DimensionError):
        VibGate.init(3, RandomSource(0), per_channel=True).forward(np.ones((2, 3)))
    with pytest.raises(InputError):
        g.forward(np.ones((2, 3)), TRAIN_SAMPLE)


def test_gate_backward_matches_finite_differences():
    rng = RandomSource(7)
    for per_channel, shape in ((False, (5, 6)), (True, (3, 6, 2, 2))):
        g = random_gate(rng, per_channel=per_channel)
        f = rng.standard_normal(shape)
        eps = rng.standard_normal((shape[0], 6))
        r = rng.standard_normal(shape)

        def loss():
            return float(np.sum(g.forward(f, TRAIN_SAMPLE, eps=eps)[0] * r))

        _, cache = g.forward(f, TRAIN_SAMPLE, eps=eps)
        df, grads = g.backward(r, cache)
        h = 1e-6
        for name in ("mu", "log_sigma2"):
            p = g.params[name]
            num = np.zeros_like(p)
            for j in range(p.size):
                p[j] += h
                up = loss()
                p[j] -= 2 * h
                down = loss()
                p[j] += h
                num[j] = (up - down) / (2 * h)
            np.testing.assert_allclose(grads[name], num, rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(df, r * (g.mu + eps * np.sqrt(g.sigma2()))[
            (slice(None), slice(None)) + (None,) * (len(shape) - 2)])


# --------------------------------------------------------------- penalty

def test_kl_trivial_values():
    assert kl_penalty(VibGate(np.zeros(4), np.zeros(4), 1.0))[0] == 0.0
    g = VibGate([0.5, 2.0, 3.0], np.log([0.25, 4.0, 9.0]), 1.0)
    assert math.isclose(kl_penalty(g)[0], 3 * math.log(2), rel_tol=1e-12)


def test_kl_gradient_finite_differences():
    rng = RandomSource(8)
    for _ in range(20):
        g = random_gate(rng)
        _, grads = kl_penalty(g)
        h = 1e-6
        for name in ("mu", "log_sigma2"):
            p = g.params[name]
            for j in range(p.size):
                p[j] += h
                up = kl_penalty(g)[0]
                p[j] -= 2 * h
                down = kl_penalty(g)[0]
                p[j] += h
                num = (up - down) / (2 * h)
                assert abs(grads[name][j] - num) <= 1e-6 * max(abs(num), 1e-3)


def test_kl_scale_invariance_and_nonnegativity():
    rng = RandomSource(9)
    g = random_gate(rng)
    c = 3.7
    scaled = VibGate(c * g.mu, g.log_sigma2 + 2 * math.log(c), g.gamma)
    assert math.isclose(kl_penalty(g)[0], kl_penalty(scaled)[0], rel_tol=1e-12)
    np.testing.assert_allclose(g.alpha(), scaled.alpha(), rtol=1e-12)
    assert kl_penalty(g)[0] >= 0


def test_alpha_hand_cases():
    np.testing.assert_array_equal(alpha([1.0, 0.0], [1.0, 1.0]), [1.0, 0.0])
    np.testing.assert_array_equal(alpha([2.0], [4.0]), [1.0])


def test_projection_clamps_log_sigma2():
    g = VibGate([1.0, 1.0, 1.0], [-50.0, 0.0, 40.0])
    g.project()
    np.testing.assert_array_equal(g.log_sigma2, [LOG_SIGMA2_MIN, 0.0, LOG_SIGMA2_MAX])


# ------------------------------------------------------------------- psi

def test_psi_constant_is_zero():
    np.testing.assert_allclose(psi_diagnostic([np.full((200, 3), 2.5)]), 0.0, atol=1e-12)


def test_psi_two_point_distribution():
    f = np.where(np.arange(1000) % 2 == 0, 1.0, math.e)[:, None]
    expected = math.log((1 + math.e ** 2) / 2) - 1
    np.testing.assert_allclose(psi_diagnostic([f[:500], f[500:]]), [expected], atol=1e-12)
    assert abs(expected - 0.43378) < 1e-5


def test_psi_is_nonnegative_and_validates():
    f = RandomSource(10).standard_normal((300, 4, 2, 2))
    assert np.all(psi_diagnostic([f]) >= 0)
    with pytest.raises(InputError):
        psi_diagnostic([])
    with pytest.raises(InputError):
        psi_diagnostic([np.ones((10, 2))])
    with pytest.raises(InputError):
        psi_diagnostic([np.ones((200, 2))], floor=0.0)
