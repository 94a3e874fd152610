"""Numerical kernels: adaptive quadrature, stable log-space helpers,
symmetric eigen-decomposition and finite-difference derivatives."""

from __future__ import annotations

import itertools
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import DomainError, QuadratureConvergenceError

__all__ = [
    "EigenResult",
    "QuadratureSpec",
    "fd_gradient",
    "fd_jacobian",
    "integrate",
    "integrate_vec",
    "log_abs_expm1",
    "log_softplus",
    "log_sum_exp",
    "logistic",
    "softplus",
    "stable_mean",
    "sym_eigen",
]

# Gauss-Kronrod 7/15 abscissae and weights on [-1, 1] (QUADPACK qk15).
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KRONROD_W = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GAUSS_W = np.zeros(15)
# Gauss nodes are the odd-indexed Kronrod abscissae (x_1, x_3, x_5) and the centre
for w, xk in zip(_WG, _XGK[1::2]):
    _GAUSS_W[np.isclose(np.abs(_NODES), xk, atol=0)] = w

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class QuadratureSpec:
    lower: float
    upper: float
    rel_tol: float = 1e-10
    abs_tol: float = 1e-16
    max_subdivisions: int = 1_000_000

    def __post_init__(self):
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise DomainError("integration bounds must be finite")
        if not self.lower < self.upper:
            raise DomainError(f"need lower < upper, got [{self.lower}, {self.upper}]")
        if self.rel_tol <= 0 or self.abs_tol < 0:
            raise DomainError("tolerances must be positive")
        if self.max_subdivisions < 1:
            raise DomainError("max_subdivisions must be at least 1")


def _initial_panels(lower, upper, points, max_width):
    cuts = [lower, upper]
    cuts += [float(p) for p in points if lower < p < upper]
    cuts = np.unique(np.asarray(cuts, dtype=float))
    a, b = [], []
    for lo, hi in itertools.pairwise(cuts):
        k = 1 if max_width is None else max(1, math.ceil((hi - lo) / max_width))
        edges = np.linspace(lo, hi, k + 1)
        a.append(edges[:-1])
        b.append(edges[1:])
    return np.concatenate(a), np.concatenate(b)


def _gk15(f, a, b):
    centre = 0.5 * (a + b)
    half = 0.5 * (b - a)
    x = centre[:, None] + half[:, None] * _NODES[None, :]
    fx = np.asarray(f(x.ravel()), dtype=float)
    if fx.ndim == 1:
        fx = fx[None, :]
    fx = fx.reshape(fx.shape[0], a.size, 15)
    kron = half * (fx @ _KRONROD_W)
    gauss = half * (fx @ _GAUSS_W)
    absint = half * (np.abs(fx) @ _KRONROD_W)
    return kron, np.abs(kron - gauss), absint


def integrate_vec(
    f: Callable[[np.ndarray], np.ndarray],
    spec: QuadratureSpec,
    points: Sequence[float] = (),
    max_width: float | None = None,
):
    """Adaptive Gauss-Kronrod (7/15) quadrature of a vector-valued integrand.

    ``f`` maps a 1-d array of abscissae of length ``n`` to an array of shape
    ``(m, n)`` (or ``(n,)`` for a scalar integrand).  ``points`` are forced
    breakpoints and ``max_width`` caps the initial panel width; both guard
    against narrow features hiding between nodes.

    Every component ``k`` must satisfy
    ``err_k <= max(abs_tol, rel_tol * |I_k|, 50 eps * int |f_k|)``; the last
    term is the round-off floor below which no quadrature can go.  Panels
    whose error exceeds their width-proportional share of the tolerance are
    bisected until the total error meets it.

    Returns ``(values, errors)`` with shape ``(m,)``.
    """
    a, b = _initial_panels(spec.lower, spec.upper, points, max_width)
    total_width = spec.upper - spec.lower
    kron, err, absint = _gk15(f, a, b)
    while True:
        value = kron.sum(axis=1)
        total_err = err.sum(axis=1)
        scale = absint.sum(axis=1)
        tol = np.maximum.reduce([
            np.full_like(value, spec.abs_tol),
            spec.rel_tol * np.abs(value),
            50 * _EPS * scale,
        ])
        if np.all(total_err <= tol) or not np.all(np.isfinite(value)):
            return value, total_err
        share = tol[:, None] * ((b - a) / total_width)[None, :]
        split = np.any(err > share, axis=0)
        if not split.any():
            # width shares sum to tol, so this only happens via round-off
            return value, total_err
        if a.size + split.sum() > spec.max_subdivisions:
            raise QuadratureConvergenceError(
                f"quadrature did not converge within {spec.max_subdivisions} panels",
                estimate=value,
                error=total_err,
            )
        mid = 0.5 * (a[split] + b[split])
        new_a = np.concatenate([a[split], mid])
        new_b = np.concatenate([mid, b[split]])
        k_new, e_new, abs_new = _gk15(f, new_a, new_b)
        keep = ~split
        a = np.concatenate([a[keep], new_a])
        b = np.concatenate([b[keep], new_b])
        kron = np.concatenate([kron[:, keep], k_new], axis=1)
        err = np.concatenate([err[:, keep], e_new], axis=1)
        absint = np.concatenate([absint[:, keep], abs_new], axis=1)


def integrate(
    f: Callable,
    spec: QuadratureSpec,
    points: Sequence[float] = (),
    max_width: float | None = None,
) -> float:
    """Integrate a scalar function over ``[spec.lower, spec.upper]``.

    ``f`` may be vectorized over numpy arrays; plain scalar callables are
    wrapped with :func:`numpy.vectorize`.
    """
    try:
        probe = np.asarray(f(np.array([0.5 * (spec.lower + spec.upper)] * 2)))
    except TypeError:
        probe = None
    g = f if probe is not None and probe.shape == (2,) else np.vectorize(f, otypes=[float])
    value, _ = integrate_vec(g, spec, points=points, max_width=max_width)
    return float(value[0])


def log_sum_exp(values) -> float:
    """``log(sum(exp(values)))`` evaluated with max-subtraction."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise DomainError("log_sum_exp of an empty vector")
    m = v.max()
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(v - m))))


def stable_mean(values, axis=0):
    """Mean computed as ``max + mean(values - max)`` along ``axis``.

    Keeps the partial sums small when individual terms are huge.
    """
    v = np.asarray(values, dtype=float)
    m = np.max(v, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(m, axis=axis) + np.mean(v - m, axis=axis)


def logistic(z):
    """Sigmoid ``1/(1+exp(-z))`` evaluated piecewise by the sign of ``z``."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def softplus(z):
    """``log(1 + exp(z))``."""
    return np.logaddexp(0.0, z)


def log_softplus(z):
    """``log(log(1 + exp(z)))`` without underflow for very negative ``z``."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = z < -30.0
    # softplus(z) = e^z (1 - e^z/2 + ...) there
    out[small] = z[small] - 0.5 * np.exp(z[small])
    out[~small] = np.log(np.logaddexp(0.0, z[~small]))
    return out


def log_abs_expm1(u):
    """``log|exp(u) - 1|`` (``-inf`` at ``u = 0``)."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    pos = u > 0
    with np.errstate(divide="ignore"):
        out[pos] = u[pos] + np.log(-np.expm1(-u[pos]))
        out[~pos] = np.log(-np.expm1(u[~pos]))
    return out


class EigenResult(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    condition_number: float

    @property
    def min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def max(self) -> float:
        return float(self.eigenvalues[-1])


def _eigen_2x2(m):
    a, b, c = m[0, 0], m[0, 1], m[1, 1]
    mean = 0.5 * (a + c)
    r = math.hypot(0.5 * (a - c), b)
    if mean >= 0:
        hi = mean + r
        lo = (a * c - b * b) / hi if hi != 0 else 0.0
    else:
        lo = mean - r
        hi = (a * c - b * b) / lo
    phi = 0.5 * math.atan2(2 * b, a - c)
    v_hi = np.array([math.cos(phi), math.sin(phi)])
    v_lo = np.array([-v_hi[1], v_hi[0]])
    return np.array([lo, hi]), np.column_stack([v_lo, v_hi])


def _jacobi(m, tol=1e-12, max_sweeps=100):
    a = m.copy()
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        # summing the off-diagonal squares directly; subtracting the diagonal
        # from the Frobenius norm cancels catastrophically near convergence
        off = np.linalg.norm(a[mask])
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(diff) > 1e150 * abs(apq):
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                cs = 1.0 / math.sqrt(t * t + 1.0)
                sn = t * cs
                rot = np.array([[cs, sn], [-sn, cs]])
                idx = [p, q]
                a[:, idx] = a[:, idx] @ rot
                a[idx, :] = rot.T @ a[idx, :]
                v[:, idx] = v[:, idx] @ rot
    w = np.diag(a).copy()
    order = np.argsort(w)
    return w[order], v[:, order]


def sym_eigen(m) -> EigenResult:
    """Eigen-decomposition of a symmetric matrix, eigenvalues ascending.

    2x2 matrices use the closed form (small eigenvalue from the determinant to
    avoid cancellation); larger ones use cyclic Jacobi rotations until the
    off-diagonal norm is below ``1e-12`` of the Frobenius norm.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError(f"need a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError("matrix has non-finite entries")
    size = np.max(np.abs(m)) if m.size else 0.0
    if np.max(np.abs(m - m.T), initial=0.0) > 1e-10 * max(size, np.finfo(float).tiny):
        raise DomainError("matrix is not symmetric")
    m = 0.5 * (m + m.T)
    if m.shape == (1, 1):
        w, v = m[0].copy(), np.eye(1)
    elif m.shape == (2, 2):
        w, v = _eigen_2x2(m)
    else:
        w, v = _jacobi(m)
    cond = w[-1] / w[0] if w[0] > 0 else math.inf
    return EigenResult(w, v, float(cond))


def fd_gradient(f: Callable[[np.ndarray], float], tau, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient ``(f(x + h e_i) - f(x - h e_i)) / 2h``."""
    if h <= 0:
        raise DomainError("finite-difference step must be positive")
    x = np.asarray(tau, dtype=float).ravel()
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def fd_jacobian(g: Callable[[np.ndarray], np.ndarray], tau, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a vector function; columns are coordinates."""
    if h <= 0:
        raise DomainError("finite-difference step must be positive")
    x = np.asarray(tau, dtype=float).ravel()
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(g(x + e)) - np.asarray(g(x - e))) / (2.0 * h))
    return np.column_stack(cols)
