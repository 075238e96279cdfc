"""Stochastic multiplicative information-bottleneck gates.

A gate multiplies a layer output ``f`` by ``z = mu + eps * sigma`` with
``eps ~ N(0, I)`` drawn fresh on every training forward pass, so that
``h | f ~ N(mu * f, sigma^2 * f^2)``. At evaluation time only the mean
multiplier ``mu`` is used. The per-unit penalty ``gamma * log(1 + alpha)``
with ``alpha = mu^2 / sigma^2`` is the closed-form KL cost after the
variational marginal's variances have been optimized out.
"""

import math

import numpy as np

from .errors import DimensionError, InputError

TRAIN_SAMPLE = "train_sample"
EVAL_MEAN = "eval_mean"
GATE_MODES = (TRAIN_SAMPLE, EVAL_MEAN)

LOG_SIGMA2_MIN = -20.0
LOG_SIGMA2_MAX = 5.0
INIT_MU_STD = 0.01
INIT_LOG_SIGMA2 = math.log(0.01)


class VibGate:
    """Per-unit (or per-channel) gate parameters and their derived ratios.

    ``log_sigma2`` parameterizes the noise variance; the optimizer keeps it
    inside ``[LOG_SIGMA2_MIN, LOG_SIGMA2_MAX]`` via :meth:`project`. A value
    of ``-inf`` is accepted and means a noiseless gate.
    """

    def __init__(self, mu, log_sigma2, gamma=0.0, per_channel=False):
        mu = np.array(mu, dtype=np.float64).reshape(-1)
        log_sigma2 = np.array(log_sigma2, dtype=np.float64).reshape(-1)
        if mu.shape != log_sigma2.shape:
            raise DimensionError(f"mu {mu.shape} and log_sigma2 {log_sigma2.shape} differ")
        if gamma < 0:
            raise InputError(f"gamma must be nonnegative, got {gamma}")
        self.params = {"mu": mu, "log_sigma2": log_sigma2}
        self.gamma = float(gamma)
        self.per_channel = bool(per_channel)

    @classmethod
    def init(cls, width, rng, gamma=0.0, per_channel=False):
        mu = rng.normal(1.0, INIT_MU_STD, (width,))
        return cls(mu, np.full(width, INIT_LOG_SIGMA2), gamma, per_channel)

    @classmethod
    def identity(cls, width, per_channel=False):
        """Noiseless unit gate: forward passes ``f`` through unchanged."""
        return cls(np.ones(width), np.full(width, -np.inf), 0.0, per_channel)

    @property
    def mu(self):
        return self.params["mu"]

    @property
    def log_sigma2(self):
        return self.params["log_sigma2"]

    @property
    def width(self):
        return self.mu.shape[0]

    @property
    def broadcast(self):
        return "per_channel" if self.per_channel else "per_neuron"

    def sigma2(self):
        return np.exp(np.clip(self.log_sigma2, LOG_SIGMA2_MIN, LOG_SIGMA2_MAX))

    def alpha(self):
        return alpha(self.mu, self.sigma2())

    def project(self):
        finite = np.isfinite(self.log_sigma2)
        self.log_sigma2[finite] = np.clip(self.log_sigma2[finite], LOG_SIGMA2_MIN, LOG_SIGMA2_MAX)

    def subset(self, keep):
        return VibGate(self.mu[keep], self.log_sigma2[keep], self.gamma, self.per_channel)

    def copy(self):
        return VibGate(self.mu.copy(), self.log_sigma2.copy(), self.gamma, self.per_channel)

    # ------------------------------------------------------------ forward

    def _check(self, f):
        if self.per_channel and f.ndim != 4:
            raise DimensionError(f"per-channel gate expects (N, C, H, W) input, got {f.shape}")
        if not self.per_channel and f.ndim != 2:
            raise DimensionError(f"per-neuron gate expects (N, D) input, got {f.shape}")
        if f.shape[1] != self.width:
            raise DimensionError(f"gate width {self.width} does not match input {f.shape}")

    def _expand(self, z, f):
        return z[:, :, None, None] if f.ndim == 4 else z

    def forward(self, f, mode=EVAL_MEAN, rng=None, eps=None, per_batch=False):
        """Return ``(h, cache)``; ``eps`` overrides sampling (frozen noise)."""
        self._check(f)
        if mode == EVAL_MEAN:
            z = self.mu[None, :]
            return f * self._expand(z, f), (f, None, None)
        if mode != TRAIN_SAMPLE:
            raise InputError(f"unknown gate mode {mode!r}")
        if eps is None:
            if rng is None:
                raise InputError("train_sample mode needs a RandomSource or explicit eps")
            rows = 1 if per_batch else f.shape[0]
            eps = rng.standard_normal((rows, self.width))
        sigma = np.exp(0.5 * np.minimum(self.log_sigma2, LOG_SIGMA2_MAX))
        z = self.mu[None, :] + eps * sigma[None, :]
        return f * self._expand(z, f), (f, eps, sigma)

    def backward(self, dh, cache):
        f, eps, sigma = cache
        prod = dh * f
        if f.ndim == 4:
            prod = prod.sum(axis=(2, 3))
        if eps is None:
            df = dh * self._expand(self.mu[None, :], f)
            return df, {"mu": prod.sum(axis=0), "log_sigma2": np.zeros(self.width)}
        z = self.mu[None, :] + eps * sigma[None, :]
        df = dh * self._expand(z, f)
        if eps.shape[0] == 1:
            dz = prod.sum(axis=0, keepdims=True)
        else:
            dz = prod
        active = self.log_sigma2 < LOG_SIGMA2_MAX
        dlog = np.where(active, 0.5 * sigma * (dz * eps).sum(axis=0), 0.0)
        return df, {"mu": dz.sum(axis=0), "log_sigma2": dlog}

    def kl_penalty(self):
        return kl_penalty(self)


def alpha(mu, sigma2):
    """Signal-to-noise ratio ``mu^2 / sigma^2`` per unit."""
    return np.asarray(mu) ** 2 / np.asarray(sigma2)


def kl_penalty(gate):
    """``gamma * sum_j log(1 + alpha_j)`` and its gradient.

    Returns ``(value, {"mu": ..., "log_sigma2": ...})``.
    """
    s2 = gate.sigma2()
    mu = gate.mu
    a = mu ** 2 / s2
    value = gate.gamma * float(np.sum(np.log1p(a)))
    inside = (gate.log_sigma2 > LOG_SIGMA2_MIN) & (gate.log_sigma2 < LOG_SIGMA2_MAX)
    grads = {
        "mu": gate.gamma * 2.0 * mu / (s2 + mu ** 2),
        "log_sigma2": np.where(inside, -gate.gamma * a / (1.0 + a), 0.0),
    }
    return value, grads


def psi_diagnostic(layer_outputs, floor=1e-12, min_samples=100):
    """Jensen gap ``log E[f^2] - E[log f^2]`` per gated unit.

    ``layer_outputs`` is an iterable of arrays shaped ``(n, r)`` or
    ``(n, r, ...)``; trailing axes are treated as extra samples of the same
    unit (the per-channel case). ``f^2`` is clamped below at ``floor``.
    Diagnostic only; this term is not part of the training objective.
    """
    if floor <= 0:
        raise InputError(f"floor must be positive, got {floor}")
    count = 0
    sum_f2 = None
    sum_log = None
    for f in layer_outputs:
        f = np.asarray(f, dtype=np.float64)
        if f.ndim < 2:
            raise DimensionError(f"expected (n, r, ...) samples, got shape {f.shape}")
        f2 = np.maximum(f ** 2, floor)
        f2 = np.moveaxis(f2, 1, -1).reshape(-1, f.shape[1])
        if sum_f2 is None:
            sum_f2 = np.zeros(f.shape[1])
            sum_log = np.zeros(f.shape[1])
        sum_f2 += f2.sum(axis=0)
        sum_log += np.log(f2).sum(axis=0)
        count += f2.shape[0]
    if count == 0:
        raise InputError("psi_diagnostic: empty sample stream")
    if count < min_samples:
        raise InputError(f"psi_diagnostic needs at least {min_samples} samples, got {count}")
    return np.log(sum_f2 / count) - sum_log / count
