"""Penalty-shape analysis, the quadratic surrogate, and kNN mutual information."""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from scipy.special import digamma

from .errors import DimensionError, DomainError, InputError
from .gate import TRAIN_SAMPLE
from .tensor import RandomSource

# ------------------------------------------------------------- penalty


def rho(mu, omega):
    """Effective penalty on ``mu`` once the noise scale is optimized out.

    ``rho(mu; omega) = 2|mu| / (|mu| + sqrt(mu^2 + 4 omega))
    + log(2 omega + mu^2 + |mu| sqrt(mu^2 + 4 omega))``. Concave and
    nondecreasing in ``|mu|``; close to a scaled l0 count for small
    ``omega`` and to a scaled l1 norm for large ``omega``.
    """
    mu = np.abs(np.asarray(mu, dtype=np.float64))
    omega = np.asarray(omega, dtype=np.float64)
    if np.any(~(omega > 0)):
        raise DomainError("omega must be strictly positive")
    root = np.sqrt(mu ** 2 + 4.0 * omega)
    return 2.0 * mu / (mu + root) + np.log(2.0 * omega + mu ** 2 + mu * root)


def rho_grad(mu, omega):
    """Derivative of :func:`rho` in ``mu`` (``0`` is returned at ``mu = 0``)."""
    mu = np.asarray(mu, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    if np.any(~(omega > 0)):
        raise DomainError("omega must be strictly positive")
    a = np.abs(mu)
    return np.sign(mu) * 4.0 / (np.sqrt(a ** 2 + 4.0 * omega) + a)


def rho_offset(omega):
    """Per-``omega`` constant separating :func:`rho` from the inf over the noise.

    ``rho(mu; omega) = min_{s > 0} [log(1 + mu^2 / s) + s / omega] + log(2 omega)``.
    """
    omega = np.asarray(omega, dtype=np.float64)
    if np.any(~(omega > 0)):
        raise DomainError("omega must be strictly positive")
    return np.log(2.0 * omega)


def optimal_noise_variance(mu, omega):
    """Minimizer ``s`` of ``log(1 + mu^2 / s) + s / omega``; zero at ``mu = 0``."""
    a = np.abs(np.asarray(mu, dtype=np.float64))
    omega = np.asarray(omega, dtype=np.float64)
    if np.any(~(omega > 0)):
        raise DomainError("omega must be strictly positive")
    return 0.5 * a * (np.sqrt(a ** 2 + 4.0 * omega) - a)


def sigma_star(a, gamma, xi):
    """Optimal noise scale ``(a / gamma + 1 / xi)^(-1/2)`` for fixed ``xi``."""
    a, gamma, xi = (np.asarray(v, dtype=np.float64) for v in (a, gamma, xi))
    if np.any(~(gamma > 0)) or np.any(~(xi > 0)) or np.any(a < 0):
        raise DomainError("need gamma > 0, xi > 0 and a >= 0")
    return (a / gamma + 1.0 / xi) ** -0.5


def xi_star(mu, sigma2, mean_f2):
    """Optimal prior variance ``(mu^2 + sigma^2) E[f^2]``."""
    mean_f2 = np.asarray(mean_f2, dtype=np.float64)
    if np.any(mean_f2 < 0):
        raise DomainError("E[f^2] must be nonnegative")
    return (np.asarray(mu) ** 2 + np.asarray(sigma2)) * mean_f2


@dataclass
class PenaltyParams:
    gamma: float
    a: float

    def __post_init__(self):
        if not self.gamma > 0 or not self.a > 0:
            raise DomainError("gamma and a must be strictly positive")

    @property
    def omega(self):
        return self.gamma / self.a


def penalty_grid(mus, omegas):
    """Rows ``(mu, omega, rho)`` over the Cartesian grid."""
    mus = np.asarray(mus, dtype=np.float64)
    rows = []
    for w in omegas:
        vals = rho(mus, w)
        rows.extend((float(m), float(w), float(v)) for m, v in zip(mus, vals))
    return rows


def write_penalty_grid(path, mus, omegas):
    rows = penalty_grid(mus, omegas)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mu", "omega", "rho"])
        writer.writerows((repr(m), repr(w), repr(v)) for m, w, v in rows)
    return rows


# ----------------------------------------------------------- surrogate

NNZ_THRESHOLD = 1e-6


@dataclass
class SurrogateProblem:
    """Quadratic data bound ``mu'Qmu + b'mu`` with ``Q = A'A`` plus the gate penalty."""

    A: np.ndarray
    b: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        d = self.A.shape[1]
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        self.gamma = np.broadcast_to(np.asarray(self.gamma, dtype=np.float64), (d,)).copy()
        if self.b.shape != (d,):
            raise DimensionError(f"b has shape {self.b.shape}, expected ({d},)")
        if np.any(~(self.gamma > 0)):
            raise DomainError("gamma must be strictly positive")

    @property
    def dim(self):
        return self.A.shape[1]

    @property
    def Q(self):
        return self.A.T @ self.A

    @property
    def a(self):
        return np.einsum("ij,ij->j", self.A, self.A)

    @classmethod
    def random(cls, dim, rank, rng, gamma=1.0, b_scale=1.0):
        """Random instance with ``rank(A) = rank`` and a strictly positive diagonal.

        ``b = -2 A'y`` for a random target ``y``, so the quadratic part is
        ``|A mu - y|^2`` up to a constant and the objective is bounded below.
        """
        if not 1 <= rank <= dim:
            raise InputError(f"need 1 <= rank <= dim, got rank={rank}, dim={dim}")
        A = rng.standard_normal((rank, dim))
        y = b_scale * rng.standard_normal(rank)
        return cls(A, -2.0 * A.T @ y, gamma)

    def objective(self, mu, sigma):
        """Full bound over ``(mu, sigma)``; ``log(1 + 0/0)`` is taken as 0."""
        mu = np.asarray(mu, dtype=np.float64)
        sigma = np.asarray(sigma, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(mu == 0, 0.0, mu ** 2 / sigma ** 2)
        Q = self.Q
        return float(np.sum(self.gamma * np.log1p(ratio)) + mu @ Q @ mu + self.b @ mu
                     + np.sum(self.a * sigma ** 2))

    def reduced_objective(self, mu):
        """Bound with ``sigma`` minimized out, up to a constant.

        Coordinates whose column of ``A`` is zero contribute only ``b'mu``.
        """
        mu = np.asarray(mu, dtype=np.float64)
        live = self.a > 0
        omega = self.gamma[live] / self.a[live]
        return float(mu @ self.Q @ mu + self.b @ mu
                     + np.sum(self.gamma[live] * (rho(mu[live], omega) - rho(0.0, omega))))

    def sigma_for(self, mu):
        """Optimal noise scale per coordinate (0 where ``mu`` or the column is 0)."""
        mu = np.asarray(mu, dtype=np.float64)
        live = self.a > 0
        out = np.zeros(self.dim)
        out[live] = np.sqrt(optimal_noise_variance(mu[live], self.gamma[live] / self.a[live]))
        return out


@dataclass
class SurrogateResult:
    mu: np.ndarray
    sigma: np.ndarray
    objective: float
    iterations: int
    converged: bool
    nnz: int = field(init=False)

    def __post_init__(self):
        self.nnz = int(np.sum(np.abs(self.mu) > NNZ_THRESHOLD))


def _prox(v, t, gamma, omega):
    """Coordinatewise minimizer of ``(m - v)^2 / 2 + t gamma rho(m; omega)``.

    With ``k = t gamma / omega <= 1/2`` the objective is convex on each half
    line. The minimizer is 0 when ``|v| <= 2 k sqrt(omega)``; otherwise it
    is the smaller root of ``(1 - 2k) m^2 - 2|v|(1 - k) m + v^2 - 4 k^2 omega``.
    """
    av = np.abs(v)
    k = t * gamma / omega
    if np.any(k > 0.5):
        raise DomainError("prox step too large for this penalty")
    root = (av * (1 - k) - k * np.sqrt(av ** 2 + 4.0 * omega * (1 - 2 * k))) / (1 - 2 * k)
    active = av > 2.0 * k * np.sqrt(omega)
    return np.where(active, np.sign(v) * np.maximum(root, 0.0), 0.0)


def surrogate_minimize(problem, restarts=20, seed=0, init_scale=1.0, max_iter=100000, tol=1e-12):
    """Local minima of the surrogate from random starts (proximal gradient).

    The smooth part ``mu'Qmu + b'mu`` takes a gradient step of size
    ``0.95 / (2 lambda_max(Q))``; the penalty is handled by its exact
    coordinatewise prox. Coordinates with a zero column of ``A`` only see
    the penalty, so they sit at ``mu = 0``. Returns one
    :class:`SurrogateResult` per restart.
    """
    live = problem.a > 0
    if np.any(problem.b[~live] != 0):
        raise DomainError("objective is unbounded: b is nonzero on a zero column of A")
    Q = problem.Q[np.ix_(live, live)]
    b = problem.b[live]
    gamma = problem.gamma[live]
    omega = gamma / problem.a[live]
    t = 0.95 / (2.0 * float(np.linalg.eigvalsh(Q)[-1])) if live.any() else 0.0
    rng = RandomSource(seed)
    results = []
    for r in range(restarts):
        m = init_scale * rng.standard_normal(int(live.sum()))
        converged = not live.any()
        it = 0
        while not converged and it < max_iter:
            it += 1
            new = _prox(m - t * (2.0 * Q @ m + b), t, gamma, omega)
            converged = np.max(np.abs(new - m)) < tol
            m = new
        mu = np.zeros(problem.dim)
        mu[live] = m
        sigma = problem.sigma_for(mu)
        results.append(SurrogateResult(mu, sigma, problem.objective(mu, sigma), it, bool(converged)))
    return results


# ---------------------------------------------------------------- KSG

KSG_JITTER = 1e-10
BRUTE_FORCE_DIM = 20


@dataclass
class MiEstimate:
    value: float
    k: int
    n: int
    jittered: bool = False

    @property
    def reported(self):
        """The estimate clipped below at 0, as used in reports."""
        return max(self.value, 0.0)


def _as_samples(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        a = a.reshape(a.shape[0], -1)
    if not np.all(np.isfinite(a)):
        raise InputError(f"{name} contains non-finite values")
    return a


def _has_duplicates(a):
    return np.unique(a, axis=0).shape[0] < a.shape[0]


def _counts_tree(x, y, k):
    joint = np.hstack([x, y])
    dist, _ = cKDTree(joint).query(joint, k=k + 1, p=np.inf)
    eps = dist[:, -1]
    r = np.nextafter(eps, 0)
    nx = cKDTree(x).query_ball_point(x, r, p=np.inf, return_length=True) - 1
    ny = cKDTree(y).query_ball_point(y, r, p=np.inf, return_length=True) - 1
    return nx, ny


def _counts_brute(x, y, k, chunk=500):
    n = x.shape[0]
    nx = np.empty(n, dtype=np.int64)
    ny = np.empty(n, dtype=np.int64)
    for s in range(0, n, chunk):
        dx = cdist(x[s:s + chunk], x, "chebyshev")
        dy = cdist(y[s:s + chunk], y, "chebyshev")
        dz = np.maximum(dx, dy)
        rows = np.arange(dz.shape[0])
        dz[rows, s + rows] = np.inf
        eps = np.partition(dz, k - 1, axis=1)[:, k - 1][:, None]
        nx[s:s + chunk] = np.sum(dx < eps, axis=1) - 1
        ny[s:s + chunk] = np.sum(dy < eps, axis=1) - 1
    return nx, ny


def _standardized(a):
    """Scale each coordinate to unit standard deviation; constant ones are left alone."""
    sd = a.std(axis=0)
    return (a - a.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def ksg_mutual_information(x, y, k=5, seed=0, jitter=None, standardize=True):
    """Kraskov-Stoegbauer-Grassberger estimate (first variant) in nats.

    Distances use the max norm and marginal counts are strict. With
    ``standardize`` every coordinate is first scaled to unit variance, so
    the estimate does not depend on per-coordinate units (mutual
    information itself does not). Exact ties make the estimator
    ill-defined, so when duplicate rows are present (or ``jitter=True``)
    both inputs get i.i.d. noise of scale ``1e-10``.
    """
    x = _as_samples(x, "x")
    y = _as_samples(y, "y")
    n = x.shape[0]
    if y.shape[0] != n:
        raise DimensionError(f"x has {n} samples but y has {y.shape[0]}")
    if k < 1 or n <= k:
        raise InputError(f"need 1 <= k < n, got k={k}, n={n}")
    if standardize:
        x, y = _standardized(x), _standardized(y)
    if jitter is None:
        jitter = _has_duplicates(x) or _has_duplicates(y)
    if jitter:
        rx, ry = RandomSource(seed).split(2)
        x = x + KSG_JITTER * rx.standard_normal(x.shape)
        y = y + KSG_JITTER * ry.standard_normal(y.shape)
    if x.shape[1] + y.shape[1] <= BRUTE_FORCE_DIM:
        nx, ny = _counts_tree(x, y, k)
    else:
        nx, ny = _counts_brute(x, y, k)
    value = digamma(k) + digamma(n) - np.mean(digamma(nx + 1) + digamma(ny + 1))
    return MiEstimate(float(value), k, n, bool(jitter))


def gaussian_mi(r):
    """Mutual information of a bivariate Gaussian with correlation ``r``."""
    if not -1 < r < 1:
        raise DomainError("correlation must lie in (-1, 1)")
    return -0.5 * np.log1p(-r * r)


class MiTracker:
    """Epoch callback estimating ``I(h_layer; x)`` on a fixed subset.

    ``h`` is one stochastic draw of the gated layer output (batch norm in
    eval mode) with noise from a fixed seed, so epochs are comparable.
    """

    def __init__(self, images, layer=1, k=5, seed=0, key="mi"):
        self.x = np.asarray(images, dtype=np.float64)
        self.layer = layer
        self.k = k
        self.seed = seed
        self.key = key
        self.history = []

    def hidden(self, net):
        _, cache = net.forward(self.x, TRAIN_SAMPLE, RandomSource(self.seed), bn_train=False)
        offset = 1 if net.input_gate is not None else 0
        return cache.hidden[self.layer - 1 + offset]

    def __call__(self, net, epoch):
        est = ksg_mutual_information(self.hidden(net), self.x, self.k, seed=self.seed, jitter=True)
        self.history.append((epoch, est.value))
        return {self.key: est.value}


def mi_track(net, images, layer=1, k=5, seed=0):
    """One-off ``I(h_layer; x)`` estimate."""
    return MiTracker(images, layer, k, seed)(net, 0)["mi"]
