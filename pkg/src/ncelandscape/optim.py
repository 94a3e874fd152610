"""Gradient descent, normalized gradient descent and Newton's method.

All three share one loop (:func:`run`) that records every iterate.  The
update direction comes from :func:`step`, which returns the increment to
*subtract* from the current parameter.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import AlreadyOptimal, ConfigError, DivergenceError, DomainError, SingularHessianError
from .expfam import as_tau_vector

__all__ = ["Algo", "AlgoConfig", "Trace", "TraceRecord", "default_step_size", "run", "step"]

SINGULAR_FLOOR = 1e-14


class Algo(str, enum.Enum):
    GD = "gd"
    NGD = "ngd"
    NEWTON = "newton"

    @classmethod
    def parse(cls, value) -> Algo:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise DomainError(f"unknown algorithm {value!r}; expected gd, ngd or newton") from None


@dataclass(frozen=True)
class AlgoConfig:
    algo: Algo
    eta: float
    max_steps: int
    target_delta: float | None = None
    grad_tol: float = 1e-14

    def __post_init__(self):
        object.__setattr__(self, "algo", Algo.parse(self.algo))
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise DomainError(f"step size must be positive and finite, got {self.eta!r}")
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise DomainError(f"max_steps must be a positive integer, got {self.max_steps!r}")
        if self.target_delta is not None and not self.target_delta > 0:
            raise DomainError("target_delta must be positive when set")


@dataclass(frozen=True)
class TraceRecord:
    step: int
    tau: np.ndarray
    loss: float
    grad_norm: float
    dist: float


@dataclass
class Trace:
    """Iterates of one optimizer run.

    ``status`` is ``"budget"`` (ran out of steps), ``"converged"`` (gradient
    below tolerance), ``"target"`` (reached ``target_delta``), ``"singular"``
    or ``"diverged"``.
    """

    records: list[TraceRecord] = field(default_factory=list)
    status: str = "running"

    def __len__(self):
        return len(self.records)

    def append(self, rec: TraceRecord):
        self.records.append(rec)

    @property
    def steps(self) -> np.ndarray:
        return np.array([r.step for r in self.records], dtype=int)

    @property
    def taus(self) -> np.ndarray:
        return np.array([r.tau for r in self.records])

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    @property
    def grad_norms(self) -> np.ndarray:
        return np.array([r.grad_norm for r in self.records])

    @property
    def dists(self) -> np.ndarray:
        return np.array([r.dist for r in self.records])

    @property
    def min_dists(self) -> np.ndarray:
        return np.minimum.accumulate(self.dists) if self.records else np.empty(0)

    def first_hit(self, delta: float) -> int | None:
        """First step whose iterate lies within ``delta`` of the optimum."""
        for r in self.records:
            if r.dist <= delta:
                return r.step
        return None


def step(config: AlgoConfig, grad, hess=None) -> np.ndarray:
    """The increment ``delta`` of one update ``tau <- tau - delta``."""
    g = np.asarray(grad, dtype=float)
    eta = config.eta
    if config.algo is Algo.GD:
        return eta * g
    if config.algo is Algo.NGD:
        norm = np.linalg.norm(g)
        if norm == 0:
            raise AlreadyOptimal("zero gradient")
        return eta * (g / norm)
    if hess is None:
        raise DomainError("Newton's method needs the Hessian")
    return eta * _newton_solve(np.asarray(hess, dtype=float), g)


def _newton_solve(h, g):
    h = 0.5 * (h + h.T)
    w = np.linalg.eigvalsh(h)
    if not (w[-1] > 0 and w[0] >= SINGULAR_FLOOR * w[-1]):
        raise SingularHessianError(
            f"Hessian eigenvalue ratio {w[0] / w[-1] if w[-1] > 0 else float('nan'):.3e} "
            f"is below the floor {SINGULAR_FLOOR:g}"
        )
    # Jacobi scaling keeps the factorization well conditioned when the
    # coordinates have very different curvature
    s = 1.0 / np.sqrt(np.diag(h))
    hs = h * s[:, None] * s[None, :]
    c = np.linalg.cholesky(hs)
    rhs = g * s
    y = np.linalg.solve(c, rhs)
    x = np.linalg.solve(c.T, y)
    # one round of iterative refinement
    r = rhs - hs @ x
    x = x + np.linalg.solve(c.T, np.linalg.solve(c, r))
    return x * s


def default_step_size(algo, **constants) -> float:
    """Step size from landscape constants.

    * GD: ``1 / sigma_max_global``
    * Newton: ``sigma_min_global / sigma_max_global``
    * NGD: ``sqrt(beta_l / (beta_u * kappa_star)) * delta``
    """
    algo = Algo.parse(algo)
    need = {
        Algo.GD: ("sigma_max_global",),
        Algo.NEWTON: ("sigma_min_global", "sigma_max_global"),
        Algo.NGD: ("beta_u", "beta_l", "kappa_star", "delta"),
    }[algo]
    missing = [k for k in need if constants.get(k) is None]
    if missing:
        raise ConfigError(f"{algo.value} step size needs {', '.join(missing)}")
    bad = [k for k in need if not constants[k] > 0]
    if bad:
        raise ConfigError(f"constants must be positive: {', '.join(bad)}")
    c = constants
    if algo is Algo.GD:
        return 1.0 / c["sigma_max_global"]
    if algo is Algo.NEWTON:
        return c["sigma_min_global"] / c["sigma_max_global"]
    return math.sqrt(c["beta_l"] / (c["beta_u"] * c["kappa_star"])) * c["delta"]


def run(objective, config: AlgoConfig, tau0, callback=None) -> Trace:
    """Iterate ``config.algo`` from ``tau0`` and record every step.

    Stops when the step budget is spent, when the gradient norm drops below
    ``config.grad_tol``, or (if set) once an iterate is within
    ``config.target_delta`` of the optimum.  ``callback(record)`` is invoked
    after each record is appended.

    ``objective`` needs an ``evaluate(tau, order)`` method; distances are
    recorded when it also has a ``tau_star`` attribute and are NaN otherwise.
    """
    tau = as_tau_vector(tau0).copy()
    if not np.all(np.isfinite(tau)):
        raise DomainError("initial parameter must be finite")
    star = getattr(objective, "tau_star", None)
    star = None if star is None else as_tau_vector(star)
    order = 2 if config.algo is Algo.NEWTON else 1
    trace = Trace()
    for t in range(config.max_steps + 1):
        ev = objective.evaluate(tau, order=order)
        gnorm = float(np.linalg.norm(ev.gradient))
        if not (math.isfinite(ev.loss) and np.all(np.isfinite(ev.gradient))):
            trace.status = "diverged"
            raise DivergenceError(f"non-finite loss or gradient at step {t}", trace=trace)
        dist = math.nan if star is None else float(np.linalg.norm(tau - star))
        rec = TraceRecord(t, tau.copy(), float(ev.loss), gnorm, dist)
        trace.append(rec)
        if callback is not None:
            callback(rec)
        if config.target_delta is not None and rec.dist <= config.target_delta:
            trace.status = "target"
            break
        if gnorm < config.grad_tol:
            trace.status = "converged"
            break
        if t == config.max_steps:
            trace.status = "budget"
            break
        try:
            tau = tau - step(config, ev.gradient, ev.hessian)
        except AlreadyOptimal:
            trace.status = "converged"
            break
        except SingularHessianError as exc:
            trace.status = "singular"
            exc.trace = trace
            raise
    return trace
