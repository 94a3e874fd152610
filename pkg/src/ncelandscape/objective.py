"""NCE and eNCE objectives over an exponential family.

With ``z(x) = (tau - tau_q) . T(x) = log p(x) - log q(x)`` the two losses are

* NCE:  ``1/2 E_{P*}[softplus(-z)] + 1/2 E_Q[softplus(z)]``
* eNCE: ``1/2 E_{P*}[exp(-z/2)] + 1/2 E_Q[exp(z/2)]``

Population values are computed by adaptive quadrature for the 1-d family
and by Monte Carlo otherwise.  Every integrand is assembled in log space:
densities are never formed directly, and the difference ``p - p*`` in the
gradients is written as ``p* expm1((tau - tau*) . T)`` so it vanishes
exactly at the optimum instead of through cancellation.
"""

from __future__ import annotations

import enum
import hashlib
import itertools
import threading
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import expfam
from .exceptions import DomainError
from .expfam import GaussianMean1D, TauParam, as_tau_vector
from .numerics import (
    QuadratureSpec,
    integrate_vec,
    log_abs_expm1,
    log_softplus,
    logistic,
    softplus,
    stable_mean,
)

__all__ = [
    "Batch",
    "ClipPolicy",
    "Evaluation",
    "LossKind",
    "MonteCarlo",
    "Objective",
    "Quadrature",
    "batch_evaluation",
    "empirical_gradient",
    "empirical_loss",
]

_LOG_HALF = np.log(0.5)
_LOG_QUARTER = np.log(0.25)
_LOG_EIGHTH = np.log(0.125)


class LossKind(str, enum.Enum):
    NCE = "nce"
    ENCE = "ence"

    @classmethod
    def parse(cls, value) -> LossKind:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise DomainError(f"unknown loss kind {value!r}; expected 'nce' or 'ence'") from None


@dataclass(frozen=True)
class Quadrature:
    """Deterministic 1-d quadrature backend.

    The domain is chosen per evaluation: ``tail`` unit standard deviations
    beyond every Gaussian centre that an integrand can have.  Set ``lower``
    and ``upper`` to pin it instead.
    """

    rel_tol: float = 1e-10
    abs_tol: float = 0.0
    max_subdivisions: int = 1_000_000
    tail: float = 12.0
    max_width: float = 0.5
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol < 0 or self.tail <= 0 or self.max_width <= 0:
            raise DomainError("quadrature tolerances, tail and panel width must be positive")
        if (self.lower is None) != (self.upper is None):
            raise DomainError("set both lower and upper, or neither")


@dataclass(frozen=True)
class ClipPolicy:
    """Per-sample stabilisers for empirical objectives.

    ``log_ratio_cap`` clamps ``z`` to ``[-cap, cap]`` before any weight is
    computed.  ``grad_norm_cap`` rescales each per-sample gradient by
    ``min(1, K / ||grad||)``.
    """

    grad_norm_cap: float | None = None
    log_ratio_cap: float | None = None

    def __post_init__(self):
        for name in ("grad_norm_cap", "log_ratio_cap"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise DomainError(f"{name} must be positive when set, got {v!r}")

    @classmethod
    def default_for(cls, loss_kind) -> ClipPolicy:
        """eNCE gets a log-ratio cap of 80 so ``exp(z/2)`` stays below ``e^40``."""
        if LossKind.parse(loss_kind) is LossKind.ENCE:
            return cls(log_ratio_cap=80.0)
        return cls()


@dataclass(frozen=True)
class MonteCarlo:
    """Fresh ``n`` samples from each of P* and Q per evaluation.

    The stream for an evaluation is seeded by ``(seed, digest(tau), counter)``
    where the counter belongs to the :class:`Objective` and advances once per
    call, so a sequence of calls is reproducible but no two calls share
    randomness.
    """

    n: int
    seed: int = 0
    clip: ClipPolicy = field(default_factory=ClipPolicy)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"Monte Carlo sample count must be a positive integer, got {self.n!r}")


@dataclass(frozen=True)
class Batch:
    data_samples: np.ndarray
    noise_samples: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data_samples, dtype=float)
        q = np.asarray(self.noise_samples, dtype=float)
        if len(d) != len(q):
            raise DomainError(f"data and noise counts differ ({len(d)} vs {len(q)})")
        if len(d) == 0:
            raise DomainError("batch is empty")
        object.__setattr__(self, "data_samples", d)
        object.__setattr__(self, "noise_samples", q)

    def __len__(self):
        return len(self.data_samples)


class Evaluation(NamedTuple):
    """Loss and derivatives at one point; ``*_se`` are Monte Carlo standard
    errors (zero for quadrature, where they hold the quadrature error bound)."""

    loss: float
    gradient: np.ndarray | None = None
    hessian: np.ndarray | None = None
    loss_se: float = 0.0
    gradient_se: np.ndarray | None = None
    hessian_se: np.ndarray | None = None


def _tau_digest(tau: np.ndarray) -> int:
    h = hashlib.blake2b(np.ascontiguousarray(tau, dtype="<f8").tobytes(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def _check_normalized(family, tau: TauParam, label: str):
    a = family.log_partition(tau.theta)
    if abs(tau.alpha - a) > 1e-9 * max(1.0, abs(a)):
        raise DomainError(f"{label} must be normalized: alpha={tau.alpha!r} but A(theta)={a!r}")


class Objective:
    """An NCE or eNCE problem: family, data parameter, noise parameter, backend."""

    def __init__(self, loss_kind, family, tau_star, tau_q, backend=None):
        self.loss_kind = LossKind.parse(loss_kind)
        self.family = family
        self.tau_star = tau_star if isinstance(tau_star, TauParam) else TauParam.from_vector(tau_star)
        self.tau_q = tau_q if isinstance(tau_q, TauParam) else TauParam.from_vector(tau_q)
        for label, t in (("tau_star", self.tau_star), ("tau_q", self.tau_q)):
            family.check_theta(t.theta)
            _check_normalized(family, t, label)
        if backend is None:
            backend = Quadrature() if family.sample_dim == 1 else MonteCarlo(n=100_000)
        if isinstance(backend, Quadrature) and not isinstance(family, GaussianMean1D):
            raise DomainError("the quadrature backend supports the 1-d Gaussian mean family only")
        if not isinstance(backend, (Quadrature, MonteCarlo)):
            raise DomainError(f"unknown backend {backend!r}")
        self.backend = backend
        self._ts = self.tau_star.vector
        self._tq = self.tau_q.vector
        self._counter = itertools.count()
        self._lock = threading.Lock()

    @classmethod
    def gaussian_1d(cls, R, loss_kind="nce", theta_q=0.0, backend=None) -> Objective:
        """Unit-variance Gaussians with means ``theta_q + R`` (data) and ``theta_q`` (noise)."""
        fam = GaussianMean1D()
        return cls(
            loss_kind,
            fam,
            expfam.tau_of_theta(fam, theta_q + R),
            expfam.tau_of_theta(fam, theta_q),
            backend,
        )

    def __repr__(self):
        return (
            f"Objective({self.loss_kind.value!r}, {self.family!r}, tau_star={self.tau_star!r}, "
            f"tau_q={self.tau_q!r}, backend={self.backend!r})"
        )

    @property
    def dim(self) -> int:
        return self._ts.size

    @property
    def separation(self) -> float:
        """``R = ||theta* - theta_q||``."""
        return float(np.linalg.norm(self.tau_star.theta - self.tau_q.theta))

    def _vec(self, tau) -> np.ndarray:
        v = as_tau_vector(tau)
        if v.shape != (self.dim,):
            raise DomainError(f"expected an extended parameter of length {self.dim}, got shape {v.shape}")
        return v

    def log_ratio(self, tau, x) -> np.ndarray:
        """``log p_tau(x) - log q(x)`` as ``(tau - tau_q) . T(x)``."""
        return self.family.suff_stats(x) @ (self._vec(tau) - self._tq)

    # population ------------------------------------------------------------

    def evaluate(self, tau, order: int = 2) -> Evaluation:
        """Loss, gradient (``order >= 1``) and Hessian (``order >= 2``) at ``tau``."""
        if order not in (0, 1, 2):
            raise DomainError("order must be 0, 1 or 2")
        tau = self._vec(tau)
        if not np.all(np.isfinite(tau)):
            raise DomainError("tau has non-finite entries")
        if isinstance(self.backend, Quadrature):
            return self._quadrature(tau, order)
        return self._monte_carlo(tau, order)

    def population_loss(self, tau) -> float:
        return self.evaluate(tau, order=0).loss

    def population_gradient(self, tau) -> np.ndarray:
        return self.evaluate(tau, order=1).gradient

    def population_hessian(self, tau) -> np.ndarray:
        return self.evaluate(tau, order=2).hessian

    # quadrature ------------------------------------------------------------

    def _domain(self, tau):
        b = self.backend
        ts, tq, t = self.tau_star.theta[0], self.tau_q.theta[0], tau[0]
        centres = [ts, tq]
        if self.loss_kind is LossKind.ENCE:
            # p* e^{-z/2} and q e^{z/2} are Gaussians centred here
            centres += [ts - 0.5 * (t - tq), 0.5 * (t + tq)]
        if b.lower is not None:
            lo, hi = b.lower, b.upper
        else:
            lo, hi = min(centres) - b.tail, max(centres) + b.tail
        points = list(centres)
        dt = t - tq
        if dt != 0:
            points.append((tau[1] - self._tq[1]) / dt)  # z = 0
        return QuadratureSpec(lo, hi, b.rel_tol, b.abs_tol, b.max_subdivisions), points

    def _log_weights(self, x, tau, order):
        """Log-magnitudes of the scalar weights multiplying 1, T and TT^T."""
        T = self.family.suff_stats(x)
        lh = self.family.log_base(x)
        lp_star = lh + T @ self._ts
        lq = lh + T @ self._tq
        z = T @ (tau - self._tq)
        out = {}
        if self.loss_kind is LossKind.NCE:
            out["loss"] = np.logaddexp(lp_star + log_softplus(-z), lq + log_softplus(z)) + _LOG_HALF
            if order >= 1:
                u = T @ (tau - self._ts)
                out["grad"] = _LOG_HALF - softplus(z) + lp_star + log_abs_expm1(u)
                out["grad_sign"] = np.sign(u)
            if order >= 2:
                out["hess"] = _LOG_HALF + np.logaddexp(lp_star, lq) - softplus(z) - softplus(-z)
        else:
            out["loss"] = np.logaddexp(lp_star - 0.5 * z, lq + 0.5 * z) + _LOG_HALF
            if order >= 1:
                u = T @ (tau - self._ts)
                out["grad"] = _LOG_QUARTER - 0.5 * z + lp_star + log_abs_expm1(u)
                out["grad_sign"] = np.sign(u)
            if order >= 2:
                out["hess"] = _LOG_EIGHTH + np.logaddexp(lp_star - 0.5 * z, lq + 0.5 * z)
        return T, out

    def _quadrature(self, tau, order) -> Evaluation:
        spec, points = self._domain(tau)
        k = self.dim
        iu = np.triu_indices(k)
        # one shift per weight so each group peaks near exp(0) on the grid
        grid = np.linspace(spec.lower, spec.upper, 4001)
        _, lw = self._log_weights(grid, tau, order)
        shifts = {}
        for key in ("loss", "grad", "hess"):
            if key in lw:
                m = np.max(lw[key])
                shifts[key] = m if np.isfinite(m) else 0.0

        def integrand(x):
            T, w = self._log_weights(x, tau, order)
            rows = [np.exp(w["loss"] - shifts["loss"])]
            if order >= 1:
                g = w["grad_sign"] * np.exp(w["grad"] - shifts["grad"])
                rows.extend(g * T[:, i] for i in range(k))
            if order >= 2:
                h = np.exp(w["hess"] - shifts["hess"])
                rows.extend(h * T[:, i] * T[:, j] for i, j in zip(*iu))
            return np.vstack(rows)

        with np.errstate(under="ignore"):
            val, err = integrate_vec(integrand, spec, points=points, max_width=self.backend.max_width)
        # an overflow here means a non-finite loss, which the optimizer reports as divergence
        with np.errstate(over="ignore", invalid="ignore"):
            scale = np.exp(shifts["loss"])
            loss, loss_err = float(val[0] * scale), float(err[0] * scale)
            grad = grad_err = hess = hess_err = None
            if order >= 1:
                s = np.exp(shifts["grad"])
                grad, grad_err = val[1 : 1 + k] * s, err[1 : 1 + k] * s
            if order >= 2:
                s = np.exp(shifts["hess"])
                hess = np.empty((k, k))
                hess_err = np.empty((k, k))
                hess[iu] = val[1 + k :] * s
                hess_err[iu] = err[1 + k :] * s
                hess.T[iu] = hess[iu]
                hess_err.T[iu] = hess_err[iu]
        return Evaluation(loss, grad, hess, loss_err, grad_err, hess_err)

    # Monte Carlo -----------------------------------------------------------

    def _next_stream(self, tau) -> np.random.Generator:
        with self._lock:
            count = next(self._counter)
        ss = np.random.SeedSequence([int(self.backend.seed), _tau_digest(tau), count])
        return np.random.Generator(np.random.Philox(ss))

    def _monte_carlo(self, tau, order) -> Evaluation:
        rng = self._next_stream(tau)
        n = int(self.backend.n)
        batch = Batch(
            expfam.draw(self.family, self.tau_star, n, rng),
            expfam.draw(self.family, self.tau_q, n, rng),
        )
        return _batch_evaluation(self, tau, batch, self.backend.clip, order, with_se=True)

    def sample_batch(self, n: int, seed: int) -> Batch:
        """``n`` draws from each of P* and Q, reproducible from ``seed``."""
        rng = np.random.Generator(np.random.Philox(seed))
        return Batch(
            expfam.draw(self.family, self.tau_star, n, rng),
            expfam.draw(self.family, self.tau_q, n, rng),
        )

    def empirical_loss(self, tau, batch: Batch, clip: ClipPolicy | None = None) -> float:
        return empirical_loss(self, tau, batch, clip)

    def empirical_gradient(self, tau, batch: Batch, clip: ClipPolicy | None = None) -> np.ndarray:
        return empirical_gradient(self, tau, batch, clip)


def _sample_weights(kind, z):
    """Per-sample loss terms, gradient coefficients and Hessian weights.

    The per-sample gradient is ``coef * T``; data rows come first.
    """
    zd, zn = z
    if kind is LossKind.NCE:
        ld, ln = softplus(-zd), softplus(zn)
        cd, cn = -logistic(-zd), logistic(zn)
        wd = logistic(zd) * logistic(-zd)
        wn = logistic(zn) * logistic(-zn)
    else:
        with np.errstate(over="ignore"):  # uncapped ratios may overflow; callers check finiteness
            ed, en = np.exp(-0.5 * zd), np.exp(0.5 * zn)
        ld, ln = ed, en
        cd, cn = -0.5 * ed, 0.5 * en
        wd, wn = 0.25 * ed, 0.25 * en
    return (np.atleast_1d(ld), np.atleast_1d(ln)), (np.atleast_1d(cd), np.atleast_1d(cn)), (wd, wn)


def batch_evaluation(kind, family, tau_q, tau, batch: Batch, clip=None, order=1, with_se=False) -> Evaluation:
    """Empirical loss and derivatives of ``kind`` on ``batch``.

    ``tau_q`` is the (normalized) noise parameter; ``with_se`` adds standard
    errors from the per-sample spread.
    """
    kind = LossKind.parse(kind)
    clip = ClipPolicy() if clip is None else clip
    tau = as_tau_vector(tau)
    delta = tau - as_tau_vector(tau_q)
    Td = family.suff_stats(batch.data_samples)
    Tn = family.suff_stats(batch.noise_samples)
    zd, zn = Td @ delta, Tn @ delta
    if clip.log_ratio_cap is not None:
        c = clip.log_ratio_cap
        zd, zn = np.clip(zd, -c, c), np.clip(zn, -c, c)
    (ld, ln), (cd, cn), (wd, wn) = _sample_weights(kind, (zd, zn))
    n = len(batch)
    loss = 0.5 * float(stable_mean(ld)) + 0.5 * float(stable_mean(ln))
    loss_se = 0.5 * np.sqrt((np.var(ld) + np.var(ln)) / n) if with_se else 0.0
    grad = grad_se = hess = hess_se = None
    if order >= 1:
        gd = cd[:, None] * Td
        gn = cn[:, None] * Tn
        if clip.grad_norm_cap is not None:
            k = clip.grad_norm_cap
            for g in (gd, gn):
                norms = np.linalg.norm(g, axis=1)
                big = norms > k
                g[big] *= (k / norms[big])[:, None]
        grad = 0.5 * stable_mean(gd, axis=0) + 0.5 * stable_mean(gn, axis=0)
        if with_se:
            grad_se = 0.5 * np.sqrt((np.var(gd, axis=0) + np.var(gn, axis=0)) / n)
    if order >= 2:
        hess = 0.5 * ((Td * wd[:, None]).T @ Td + (Tn * wn[:, None]).T @ Tn) / n
        hess = 0.5 * (hess + hess.T)
        if with_se:
            second = []
            for T, w in ((Td, wd), (Tn, wn)):
                T2 = T * T
                m2 = ((T2 * (w * w)[:, None]).T @ T2) / n
                m1 = ((T * w[:, None]).T @ T) / n
                second.append(np.maximum(m2 - m1 * m1, 0.0))
            hess_se = 0.5 * np.sqrt((second[0] + second[1]) / n)
    return Evaluation(loss, grad, hess, float(loss_se), grad_se, hess_se)


def _batch_evaluation(obj: Objective, tau, batch: Batch, clip, order, with_se=False) -> Evaluation:
    return batch_evaluation(obj.loss_kind, obj.family, obj._tq, obj._vec(tau), batch, clip, order, with_se)


def empirical_loss(obj: Objective, tau, batch: Batch, clip: ClipPolicy | None = None) -> float:
    """Sample-mean loss over ``batch`` (equal numbers of data and noise draws)."""
    return _batch_evaluation(obj, tau, batch, clip, order=0).loss


def empirical_gradient(obj: Objective, tau, batch: Batch, clip: ClipPolicy | None = None) -> np.ndarray:
    """Mean of per-sample gradients, with optional clipping.

    With a log-ratio cap the per-sample weights use the clamped ratio, so
    the result is the gradient of the clamped surrogate only where no sample
    hits the cap.
    """
    return _batch_evaluation(obj, tau, batch, clip, order=1).gradient
