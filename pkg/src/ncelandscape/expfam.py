"""Exponential families with the log partition carried as a free parameter.

A member is written ``p(x) = h(x) exp(tau . T(x))`` where ``tau = [theta,
alpha]`` and ``T(x) = [T~(x), -1]``.  When ``alpha`` equals the log
partition ``A(theta)`` the density is normalized; NCE leaves it free.

Two families are supported:

* :class:`GaussianMean1D` -- unit-variance Gaussian on the real line,
  ``T~(x) = x`` with base measure ``h(x) = exp(-x^2/2)``.
* :class:`DiagGaussian` -- ``d``-dimensional Gaussian with diagonal
  covariance, ``theta = [precisions, precision * mean]``,
  ``T~(x) = [-x^2/2, x]`` and ``h = 1``.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

__all__ = [
    "LOG_SQRT_2PI",
    "DiagGaussian",
    "FamilyBounds",
    "GaussianMean1D",
    "TauParam",
    "draw",
    "family_bounds",
    "fisher_matrix",
    "log_partition",
    "log_pdf",
    "normalized_tau",
    "sample",
    "suff_stats",
    "tau_of_theta",
]


@dataclass(frozen=True, eq=False)
class TauParam:
    """Extended parameter ``[theta, alpha]``."""

    theta: np.ndarray
    alpha: float

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float)).copy()
        if theta.ndim != 1:
            raise DomainError(f"theta must be a vector, got shape {theta.shape}")
        alpha = float(self.alpha)
        if not (np.all(np.isfinite(theta)) and np.isfinite(alpha)):
            raise DomainError("TauParam entries must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "alpha", alpha)

    @property
    def vector(self) -> np.ndarray:
        return np.append(self.theta, self.alpha)

    @classmethod
    def from_vector(cls, v) -> TauParam:
        v = np.asarray(v, dtype=float).ravel()
        if v.size < 2:
            raise DomainError("an extended parameter needs at least two entries")
        return cls(v[:-1], v[-1])

    def __len__(self):
        return self.theta.size + 1

    def __eq__(self, other):
        if not isinstance(other, TauParam):
            return NotImplemented
        return self.alpha == other.alpha and np.array_equal(self.theta, other.theta)

    def __hash__(self):
        return hash((self.theta.tobytes(), self.alpha))

    def __repr__(self):
        return f"TauParam(theta={self.theta.tolist()}, alpha={self.alpha!r})"


def as_tau_vector(tau) -> np.ndarray:
    """Flatten a :class:`TauParam` or array-like into a float vector."""
    if isinstance(tau, TauParam):
        return tau.vector
    return np.asarray(tau, dtype=float).ravel()


class GaussianMean1D:
    """Unit-variance Gaussian mean family on the real line."""

    name = "gaussian_mean_1d"
    sample_dim = 1
    theta_dim = 1
    suff_stat_dim = 2

    def __eq__(self, other):
        return isinstance(other, GaussianMean1D)

    def __hash__(self):
        return hash(self.name)

    def __repr__(self):
        return "GaussianMean1D()"

    @staticmethod
    def points(x) -> np.ndarray:
        """Normalize sample input to an array of scalars, accepting ``(n, 1)``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 2 and x.shape[1] == 1:
            x = x[:, 0]
        return x

    def suff_stats(self, x) -> np.ndarray:
        x = self.points(x)
        return np.stack([x, -np.ones_like(x)], axis=-1)

    def log_base(self, x) -> np.ndarray:
        x = self.points(x)
        return -0.5 * x * x

    def check_theta(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (1,):
            raise DomainError(f"GaussianMean1D expects a scalar theta, got shape {theta.shape}")
        return theta

    def log_partition(self, theta) -> float:
        t = self.check_theta(theta)[0]
        return 0.5 * t * t + LOG_SQRT_2PI

    def grad_log_partition(self, theta) -> np.ndarray:
        return self.check_theta(theta).copy()

    def theta_from_mean_params(self, mean_params) -> np.ndarray:
        mp = np.atleast_1d(np.asarray(mean_params, dtype=float))
        if mp.shape != (1,):
            raise DomainError("GaussianMean1D takes exactly one mean parameter")
        return mp

    def moments(self, theta):
        """Per-coordinate (mean, variance) of the normalized member."""
        t = self.check_theta(theta)
        return t.copy(), np.ones(1)

    def fisher(self, theta) -> np.ndarray:
        t = self.check_theta(theta)[0]
        return np.array([[t * t + 1.0, -t], [-t, 1.0]])


@dataclass(frozen=True)
class DiagGaussian:
    """Diagonal-covariance Gaussian in ``d`` dimensions.

    Natural parameter ordering is precisions first, then the linear block
    ``precision * mean``; the sufficient statistic is
    ``[-x_1^2/2, ..., -x_d^2/2, x_1, ..., x_d, -1]``.
    """

    d: int

    name = "diag_gaussian"

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise DomainError(f"dimension must be a positive integer, got {self.d!r}")

    @property
    def sample_dim(self) -> int:
        return self.d

    @property
    def theta_dim(self) -> int:
        return 2 * self.d

    @property
    def suff_stat_dim(self) -> int:
        return 2 * self.d + 1

    def points(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.d,):
            if self.d == 1 and x.ndim <= 1:
                return x[..., None]
            raise DomainError(f"expected samples with trailing dimension {self.d}, got {x.shape}")
        return x

    def suff_stats(self, x) -> np.ndarray:
        x = self.points(x)
        minus_one = -np.ones(x.shape[:-1] + (1,))
        return np.concatenate([-0.5 * x * x, x, minus_one], axis=-1)

    def log_base(self, x) -> np.ndarray:
        x = self.points(x)
        return np.zeros(x.shape[:-1])

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.shape != (2 * self.d,):
            raise DomainError(f"DiagGaussian({self.d}) expects {2 * self.d} natural parameters")
        if np.any(theta[: self.d] <= 0):
            raise DomainError("precisions must be positive")
        return theta

    def log_partition(self, theta) -> float:
        theta = self.check_theta(theta)
        prec, lin = theta[: self.d], theta[self.d :]
        return float(np.sum(0.5 * lin * lin / prec + 0.5 * np.log(2.0 * np.pi / prec)))

    def grad_log_partition(self, theta) -> np.ndarray:
        # d/dtheta A = E[T~(x)] = [-E[x^2]/2, E[x]]
        mean, var = self.moments(theta)
        return np.concatenate([-0.5 * (mean * mean + var), mean])

    def theta_from_mean_params(self, mean_params) -> np.ndarray:
        mp = np.asarray(mean_params, dtype=float).ravel()
        if mp.shape != (2 * self.d,):
            raise DomainError(f"DiagGaussian({self.d}) takes {self.d} means and {self.d} variances")
        mean, var = mp[: self.d], mp[self.d :]
        if np.any(var <= 0):
            raise DomainError("variances must be positive")
        return np.concatenate([1.0 / var, mean / var])

    def moments(self, theta):
        theta = self.check_theta(theta)
        prec, lin = theta[: self.d], theta[self.d :]
        return lin / prec, 1.0 / prec

    def fisher(self, theta) -> np.ndarray:
        m, v = self.moments(theta)
        m2 = m * m + v
        m3 = m**3 + 3 * m * v
        m4 = m**4 + 6 * m * m * v + 3 * v * v
        d = self.d
        k = 2 * d + 1
        out = np.empty((k, k))
        qq = np.outer(m2, m2) / 4.0
        np.fill_diagonal(qq, m4 / 4.0)
        ql = -0.5 * np.outer(m2, m)
        np.fill_diagonal(ql, -0.5 * m3)
        ll = np.outer(m, m)
        np.fill_diagonal(ll, m2)
        out[:d, :d] = qq
        out[:d, d : 2 * d] = ql
        out[d : 2 * d, :d] = ql.T
        out[d : 2 * d, d : 2 * d] = ll
        out[:d, -1] = out[-1, :d] = 0.5 * m2
        out[d : 2 * d, -1] = out[-1, d : 2 * d] = -m
        out[-1, -1] = 1.0
        return out


def tau_of_theta(family, mean_params) -> TauParam:
    """Normalized extended parameter from mean-space parameters.

    ``mean_params`` is the mean for :class:`GaussianMean1D` and
    ``[means..., variances...]`` for :class:`DiagGaussian`.
    """
    theta = family.theta_from_mean_params(mean_params)
    return TauParam(theta, family.log_partition(theta))


def normalized_tau(family, theta) -> TauParam:
    """Extended parameter with ``alpha`` set to the exact log partition."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return TauParam(theta, family.log_partition(theta))


def suff_stats(family, x) -> np.ndarray:
    return family.suff_stats(x)


def log_pdf(family, tau, x) -> np.ndarray:
    """``log h(x) + tau . T(x)``; a normalized log density when alpha = A(theta)."""
    return family.log_base(x) + family.suff_stats(x) @ as_tau_vector(tau)


def log_partition(family, theta) -> float:
    return family.log_partition(theta)


def sample(family, tau, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` i.i.d. points, shape ``(n, sample_dim)``.

    ``alpha`` is ignored: the sampler always draws from the normalized member
    with natural parameter ``theta``.  Streams come from a Philox counter
    generator so a seed reproduces bit-for-bit across platforms.
    """
    if n < 0:
        raise DomainError("sample count must be non-negative")
    rng = np.random.Generator(np.random.Philox(seed))
    return draw(family, tau, n, rng)


def draw(family, tau, n: int, rng: np.random.Generator) -> np.ndarray:
    """Like :func:`sample` but consuming an existing generator."""
    theta = tau.theta if isinstance(tau, TauParam) else as_tau_vector(tau)[:-1]
    mean, var = family.moments(theta)
    z = rng.standard_normal((int(n), family.sample_dim))
    return mean + np.sqrt(var) * z


def fisher_matrix(family, theta) -> np.ndarray:
    """Closed-form ``E_theta[T(x) T(x)^T]`` (population Fisher in extended coordinates)."""
    return family.fisher(theta)


@dataclass(frozen=True)
class FamilyBounds:
    """Constants of the regularity assumptions, measured over a parameter set."""

    omega: float
    beta_Z: float
    lambda_max: float
    lambda_min: float
    gamma_max: float
    gamma_min: float

    def __post_init__(self):
        vals = (self.omega, self.beta_Z, self.lambda_max, self.lambda_min)
        if min(vals) <= 0:
            raise DomainError(f"family bounds must be positive, got {self}")
        if self.lambda_min > self.lambda_max:
            raise DomainError("lambda_min exceeds lambda_max")

    @property
    def fisher_ratio(self) -> float:
        return self.lambda_max / self.lambda_min


def _fisher_extremes(family, theta):
    ev = np.linalg.eigvalsh(family.fisher(theta))
    return ev[0], ev[-1]


def family_bounds(family, thetas: Sequence, fd_step: float = 1e-5) -> FamilyBounds:
    """Measure the regularity constants over the points ``thetas``.

    ``thetas`` should densely cover the parameter set (e.g. a grid over a
    box); the convex hull of the points is what the constants describe.
    ``beta_Z`` is the largest gradient norm of the log partition, and the
    ``gamma`` constants the largest gradient norms of the Fisher extreme
    eigenvalues (central differences with step ``fd_step``).
    """
    pts = [np.atleast_1d(np.asarray(t, dtype=float)) for t in thetas]
    if not pts:
        raise DomainError("need at least one parameter point")
    omega = max(float(np.linalg.norm(t)) for t in pts)
    beta_z = max(float(np.linalg.norm(family.grad_log_partition(t))) for t in pts)
    lam_min, lam_max = np.inf, 0.0
    g_max = g_min = 0.0
    for t in pts:
        lo, hi = _fisher_extremes(family, t)
        lam_min, lam_max = min(lam_min, lo), max(lam_max, hi)
        grad_lo = np.empty(t.size)
        grad_hi = np.empty(t.size)
        for i in range(t.size):
            e = np.zeros(t.size)
            e[i] = fd_step
            lo_p, hi_p = _fisher_extremes(family, t + e)
            lo_m, hi_m = _fisher_extremes(family, t - e)
            grad_lo[i] = (lo_p - lo_m) / (2 * fd_step)
            grad_hi[i] = (hi_p - hi_m) / (2 * fd_step)
        g_max = max(g_max, float(np.linalg.norm(grad_hi)))
        g_min = max(g_min, float(np.linalg.norm(grad_lo)))
    # a zero-width set (single point at the origin) still needs positive constants
    tiny = np.finfo(float).tiny
    return FamilyBounds(
        omega=max(omega, tiny),
        beta_Z=max(beta_z, tiny),
        lambda_max=float(lam_max),
        lambda_min=float(lam_min),
        gamma_max=g_max,
        gamma_min=g_min,
    )
