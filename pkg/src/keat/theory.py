"""Numerical checks of the kernel/time-encoding theory.

Three families of results are covered:

* moment ratios ``R_n = E[psi(t) t^n] / E[t^n]`` and their decay,
* Taylor coefficients of ``exp(-lambda t) cos(omega t)`` (a kernel-modulated
  cosine picks up odd powers of ``t``; a bare cosine does not),
* the variance change of an attention logit ``s = X + psi Y`` when the edge
  term ``Y`` is down-weighted, for one edge and for a neighborhood average.

Monte-Carlo estimates always come with standard errors so callers can test
agreement at a chosen number of sigmas.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import DegenerateDataError, DomainError
from .kernels import kernel_values

# named samplers over [0, inf): rng, size -> array
DISTRIBUTIONS: dict[str, Callable] = {
    "exp1": lambda rng, n: rng.exponential(1.0, n),
    "uniform": lambda rng, n: rng.uniform(0.0, 1.0, n),
    "halfnormal": lambda rng, n: np.abs(rng.standard_normal(n)),
    "lognormal": lambda rng, n: rng.lognormal(0.0, 0.5, n),
    "gamma2": lambda rng, n: rng.gamma(2.0, 1.0, n),
    "point0": lambda rng, n: np.zeros(n),
}


# -- moment ratios ------------------------------------------------------------

@dataclass
class MomentReport:
    orders: np.ndarray
    base_moments: np.ndarray        # E[t^n]
    weighted_moments: np.ndarray    # E[psi(t) t^n]
    ratios: np.ndarray              # R_n
    mc_std_errors: np.ndarray       # standard error of each R_n
    base_std_errors: np.ndarray
    weighted_std_errors: np.ndarray
    violations: list = field(default_factory=list)   # n where R_{n+1} > R_n beyond 3 SE

    @property
    def strictly_decreasing(self):
        return bool(np.all(np.diff(self.ratios) < 0))

    def rows(self):
        return [(int(n), float(b), float(w), float(r), float(s))
                for n, b, w, r, s in zip(self.orders, self.base_moments, self.weighted_moments,
                                         self.ratios, self.mc_std_errors)]


def moment_ratios(dist, kernel, N=12, samples=1_000_000, seed=0, sigmas=3.0):
    """Monte-Carlo moment ratios of ``kernel`` under ``dist``.

    ``dist`` is a name from :data:`DISTRIBUTIONS` or a callable
    ``(rng, size) -> samples``.  ``t^n`` grows factorially, so each order is
    accumulated as ``exp(n log t - max)`` and rescaled afterwards.  The ratio
    standard error uses the delta method for a ratio of means.
    """
    if kernel is None or kernel.family == "none":
        raise DomainError("an identity kernel gives R_n = 1 for every n; nothing to test")
    if N < 1:
        raise DomainError("N must be >= 1")
    if samples < 100_000:
        raise DomainError("use at least 1e5 samples")
    sampler = DISTRIBUTIONS[dist] if isinstance(dist, str) else dist
    rng = np.random.default_rng(seed)
    t = np.asarray(sampler(rng, int(samples)), dtype=np.float64)
    if np.any(t < 0) or not np.isfinite(t).all():
        raise DomainError("samples must be finite and lie in [0, inf)")
    psi = kernel_values(kernel, t)
    psi = np.asarray(getattr(psi, "data", psi), dtype=np.float64)

    m = len(t)
    with np.errstate(divide="ignore"):
        log_t = np.log(t)
    orders = np.arange(N + 1)
    base, weighted, ratio, se, base_se, w_se = (np.zeros(N + 1) for _ in range(6))
    for n in orders:
        if n == 0:
            logw = np.zeros(m)
        else:
            logw = n * log_t
        top = logw.max()
        if not np.isfinite(top):
            raise DegenerateDataError(f"E[t^{n}] = 0 (all mass at t = 0); R_{n} is undefined")
        w = np.exp(logw - top)
        pw = psi * w
        b, a = w.mean(), pw.mean()
        r = a / b
        with np.errstate(over="ignore"):
            scale = float(np.exp(top))          # inf past float range; ratios are unaffected
        base[n], weighted[n], ratio[n] = b * scale, a * scale, r
        base_se[n] = w.std() / math.sqrt(m) * scale
        w_se[n] = pw.std() / math.sqrt(m) * scale
        se[n] = (pw - r * w).std() / math.sqrt(m) / b

    violations = [int(n) for n in range(N)
                  if ratio[n + 1] - ratio[n] > sigmas * math.hypot(se[n], se[n + 1])]
    return MomentReport(orders, base, weighted, ratio, se, base_se, w_se, violations)


# -- Taylor coefficients of a kernel-modulated cosine ---------------------------

@dataclass
class SeriesCoefficients:
    a: np.ndarray    # kernel exp(-lambda t): a_m = (-lambda)^m / m!
    b: np.ndarray    # cos(omega t): b_n = (-1)^n omega^(2n) / (2n)!, coefficient of t^(2n)
    c: np.ndarray    # product: c_k = sum over m + 2n = k of a_m b_n

    def value(self, t):
        """Horner evaluation of ``sum_k c_k t^k``."""
        acc = 0.0
        for ck in self.c[::-1]:
            acc = acc * t + ck
        return acc


def product_series(lam, omega, K):
    if K < 0:
        raise DomainError("K must be >= 0")
    a = np.empty(K + 1)
    a[0] = 1.0
    for m in range(1, K + 1):
        a[m] = a[m - 1] * (-lam) / m
    half = K // 2
    b = np.empty(half + 1)
    b[0] = 1.0
    for n in range(1, half + 1):
        b[n] = -b[n - 1] * omega * omega / ((2 * n - 1) * (2 * n))
    c = np.zeros(K + 1)
    for k in range(K + 1):
        c[k] = sum(a[k - 2 * n] * b[n] for n in range(k // 2 + 1))
    return SeriesCoefficients(a, b, c)


class SeriesComparison(NamedTuple):
    series: float
    direct: float
    abs_diff: float
    remainder_bound: float


def series_vs_direct(lam, omega, t, K, tol=1e-6):
    """Truncated series against ``exp(-lam t) cos(omega t)``.

    The product is the real part of ``exp((-lam + i omega) t)``, so
    ``|c_k| <= r^k / k!`` with ``r = |(-lam, omega)|`` and the tail after
    ``K`` is bounded by ``(r|t|)^(K+1) / (K+1)! * exp(r|t|)``.  A bound above
    ``tol`` means K terms have not converged at this ``t``; a warning is
    issued and the values are still returned.
    """
    coeffs = product_series(lam, omega, K)
    series = float(coeffs.value(t))
    direct = math.exp(-lam * t) * math.cos(omega * t)
    x = math.hypot(lam, omega) * abs(t)
    log_bound = (K + 1) * math.log(x) - math.lgamma(K + 2) + x if x > 0 else -math.inf
    bound = math.exp(min(log_bound, 700.0))
    if bound > tol:
        warnings.warn(f"series truncated at K={K} has not converged at t={t} "
                      f"(tail bound {bound:.3g} > {tol:g})", RuntimeWarning, stacklevel=2)
    return SeriesComparison(series, direct, abs(series - direct), bound)


# -- variance of the modulated logit ---------------------------------------

@dataclass
class VarianceFixture:
    sigma_x: float
    sigma_y: float
    rho: float
    psi: float

    def __post_init__(self):
        if not (self.sigma_x > 0 and self.sigma_y > 0):
            raise DomainError("sigma_x and sigma_y must be positive")
        if not -1.0 <= self.rho <= 1.0:
            raise DomainError(f"correlation must lie in [-1, 1], got {self.rho}")
        if not 0.0 < self.psi <= 1.0:
            raise DomainError(f"psi must lie in (0, 1], got {self.psi}")

    @property
    def condition(self):
        """Sufficient condition for a variance reduction."""
        return self.sigma_y * (1.0 + self.psi) >= 2.0 * self.sigma_x

    def covariance(self):
        c = self.rho * self.sigma_x * self.sigma_y
        return np.array([[self.sigma_x ** 2, c], [c, self.sigma_y ** 2]])


@dataclass
class VarianceResult:
    analytic: float
    monte_carlo: float
    std_error: float
    condition: bool

    def agrees(self, sigmas=3.0):
        return abs(self.analytic - self.monte_carlo) <= sigmas * self.std_error + 1e-12


def variance_delta_analytic(fx):
    """``Var[X + Y] - Var[X + psi Y]``."""
    return (1.0 - fx.psi) * (fx.sigma_y ** 2 * (1.0 + fx.psi) + 2.0 * fx.rho * fx.sigma_x * fx.sigma_y)


def correlated_normals(cov, samples, rng):
    """Zero-mean Gaussian rows with covariance ``cov``.

    Uses a Cholesky factor; singular covariances (perfect correlation) fall
    back to an eigen-decomposition square root.
    """
    cov = np.asarray(cov, dtype=np.float64)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(cov)
        if w.min() < -1e-10 * max(1.0, abs(w).max()):
            raise DomainError("covariance matrix is not positive semidefinite") from None
        L = V * np.sqrt(np.clip(w, 0.0, None))
    return rng.standard_normal((int(samples), cov.shape[0])) @ L.T


def _mc_delta(s0, sk):
    # Var[s0] - Var[sk] as a mean of per-sample terms, so its SE is direct
    u = (s0 - s0.mean()) ** 2 - (sk - sk.mean()) ** 2
    return float(u.mean()), float(u.std() / math.sqrt(len(u)))


def variance_delta(fx, samples=1_000_000, seed=0):
    if samples < 1_000_000:
        raise DomainError("use at least 1e6 Monte-Carlo pairs")
    rng = np.random.default_rng(seed)
    xy = correlated_normals(fx.covariance(), samples, rng)
    x, y = xy[:, 0], xy[:, 1]
    mc, se = _mc_delta(x + y, x + fx.psi * y)
    return VarianceResult(variance_delta_analytic(fx), mc, se, fx.condition)


def random_fixture(rng, satisfy=True):
    """A random single-edge fixture, optionally inside the sufficient condition."""
    while True:
        sx = float(rng.uniform(0.1, 3.0))
        sy = float(rng.uniform(0.1, 6.0))
        fx = VarianceFixture(sx, sy, float(rng.uniform(-1.0, 1.0)), float(rng.uniform(0.01, 1.0)))
        if not satisfy or fx.condition:
            return fx


# -- neighborhood average ------------------------------------------------------

@dataclass
class NeighborhoodFixture:
    """Joint covariance of ``(X_1..X_n, Y_1..Y_n)`` and per-neighbor psi."""
    cov: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        self.cov = np.asarray(self.cov, dtype=np.float64)
        self.psi = np.asarray(self.psi, dtype=np.float64).reshape(-1)
        n = len(self.psi)
        if self.cov.shape != (2 * n, 2 * n):
            raise DomainError(f"covariance must be {2 * n}x{2 * n} for {n} neighbors")
        if not np.allclose(self.cov, self.cov.T):
            raise DomainError("covariance must be symmetric")
        if np.any(self.psi <= 0) or np.any(self.psi > 1):
            raise DomainError("psi values must lie in (0, 1]")
        w = np.linalg.eigvalsh(self.cov)
        if w.min() < -1e-10 * max(1.0, abs(w).max()):
            raise DomainError("covariance matrix is not positive semidefinite")

    @property
    def n(self):
        return len(self.psi)

    def blocks(self):
        n = self.n
        return self.cov[:n, :n], self.cov[:n, n:], self.cov[n:, n:]

    def cross_nonnegative(self):
        """Every covariance between different neighbors is >= 0."""
        off = ~np.eye(self.n, dtype=bool)
        return all(np.all(b[off] >= 0) for b in self.blocks())

    def edge_conditions(self):
        sx = np.sqrt(np.diag(self.cov)[:self.n])
        sy = np.sqrt(np.diag(self.cov)[self.n:])
        return sy * (1.0 + self.psi) >= 2.0 * sx

    @classmethod
    def independent(cls, fixtures):
        """Neighbors with no cross-neighbor covariance."""
        n = len(fixtures)
        cov = np.zeros((2 * n, 2 * n))
        for j, fx in enumerate(fixtures):
            c = fx.covariance()
            cov[j, j], cov[j, n + j], cov[n + j, j], cov[n + j, n + j] = c[0, 0], c[0, 1], c[1, 0], c[1, 1]
        return cls(cov, [fx.psi for fx in fixtures])


@dataclass
class NeighborhoodResult:
    analytic: float
    monte_carlo: float | None
    std_error: float | None
    condition: bool              # cross covariances >= 0 and every edge satisfies its condition

    def agrees(self, sigmas=3.0):
        return abs(self.analytic - self.monte_carlo) <= sigmas * self.std_error + 1e-12


def neighborhood_variance_delta_analytic(fx):
    """``Var[mean_j (X_j + Y_j)] - Var[mean_j (X_j + psi_j Y_j)]``.

    Expanded over neighbor pairs ``(j, l)``:
    ``(1 - psi_j psi_l) Cov(Y_j, Y_l) + (1 - psi_l) Cov(X_j, Y_l) + (1 - psi_j) Cov(Y_j, X_l)``.
    """
    _, cxy, cyy = fx.blocks()
    p = fx.psi
    total = ((1.0 - np.outer(p, p)) * cyy).sum()
    total += (cxy * (1.0 - p)[None, :]).sum()        # Cov(X_j, Y_l)
    total += (cxy.T * (1.0 - p)[:, None]).sum()      # Cov(Y_j, X_l)
    return float(total / fx.n ** 2)


def neighborhood_variance_delta(fx, samples=1_000_000, seed=0, require_nonneg=True):
    """Neighborhood-averaged variance change with a Monte-Carlo cross-check.

    ``require_nonneg`` rejects fixtures with a negative cross-neighbor
    covariance, where the non-negativity result does not apply.
    ``samples=0`` skips the Monte-Carlo part.
    """
    if require_nonneg and not fx.cross_nonnegative():
        raise DomainError("negative cross-neighbor covariance: outside the range where the reduction is guaranteed")
    analytic = neighborhood_variance_delta_analytic(fx)
    cond = fx.cross_nonnegative() and bool(np.all(fx.edge_conditions()))
    if not samples:
        return NeighborhoodResult(analytic, None, None, cond)
    rng = np.random.default_rng(seed)
    z = correlated_normals(fx.cov, samples, rng)
    n = fx.n
    x, y = z[:, :n], z[:, n:]
    mc, se = _mc_delta((x + y).mean(axis=1), (x + fx.psi * y).mean(axis=1))
    return NeighborhoodResult(analytic, mc, se, cond)


def random_neighborhood(rng, n, satisfy=True):
    """Random fixture with non-negative cross-neighbor covariances.

    Neighbors share a non-negative common factor on X and on Y, which keeps
    every cross covariance >= 0 and the matrix PSD by construction.
    """
    while True:
        edges = [random_fixture(rng, satisfy) for _ in range(n)]
        base = NeighborhoodFixture.independent(edges).cov
        gx, gy = rng.uniform(0.0, 0.5, n), rng.uniform(0.0, 0.5, n)
        g = np.concatenate([gx, gy])
        cov = base + np.outer(g, g)
        fx = NeighborhoodFixture(cov, [e.psi for e in edges])
        if not satisfy or fx.condition_holds():
            return fx


def _condition_holds(self):
    return self.cross_nonnegative() and bool(np.all(self.edge_conditions()))


NeighborhoodFixture.condition_holds = _condition_holds
