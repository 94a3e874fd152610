"""Independent reference computations used by the tests.

Nothing here imports the package under test.  Integrals use a dense
uniform trapezoid grid (spectrally accurate for Gaussian-tailed smooth
integrands), linear algebra uses closed forms or numpy.linalg.
"""

import math

import numpy as np

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def trapezoid_grid(lo, hi, n=400_001):
    x = np.linspace(lo, hi, n)
    w = np.full(n, x[1] - x[0])
    w[0] = w[-1] = 0.5 * (x[1] - x[0])
    return x, w


def log_normal_pdf(x, mean, var=1.0):
    return -0.5 * (x - mean) ** 2 / var - 0.5 * math.log(2.0 * math.pi * var)


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def gaussian_1d_objective(kind, theta_star, theta_q, b, c, order=2, n=400_001):
    """Loss, gradient and Hessian in (b, c) = (theta, alpha) coordinates.

    Model log density is ``b x - c - x^2/2``; T(x) = [x, -1].
    """
    lo = min(theta_star, theta_q, b) - 14.0
    hi = max(theta_star, theta_q, b) + 14.0
    x, w = trapezoid_grid(lo, hi, n)
    lps = log_normal_pdf(x, theta_star)
    lq = log_normal_pdf(x, theta_q)
    lp = b * x - c - 0.5 * x * x
    z = lp - lq
    ps, q = np.exp(lps), np.exp(lq)
    T = np.stack([x, -np.ones_like(x)])
    if kind == "nce":
        loss = 0.5 * np.sum(w * ps * _softplus(-z)) + 0.5 * np.sum(w * q * _softplus(z))
        coeff = -0.5 * ps * _sigmoid(-z) + 0.5 * q * _sigmoid(z)
        curv = 0.5 * (ps + q) * _sigmoid(z) * _sigmoid(-z)
    else:
        loss = 0.5 * np.sum(w * ps * np.exp(-0.5 * z)) + 0.5 * np.sum(w * q * np.exp(0.5 * z))
        coeff = -0.25 * ps * np.exp(-0.5 * z) + 0.25 * q * np.exp(0.5 * z)
        curv = 0.125 * (ps * np.exp(-0.5 * z) + q * np.exp(0.5 * z))
    grad = T @ (w * coeff)
    hess = (T * (w * curv)) @ T.T
    return float(loss), grad, hess


def nce_hessian_at_noise(R):
    """(E_*[T T^T] + E_Q[T T^T]) / 8 for unit-variance means R and 0."""
    e_star = np.array([[R * R + 1.0, -R], [-R, 1.0]])
    e_q = np.array([[1.0, 0.0], [0.0, 1.0]])
    return (e_star + e_q) / 8.0


def ence_hessian_at_optimum(R):
    """BC/4 times the second moment of T under the midpoint Gaussian."""
    m = R / 2.0
    return math.exp(-R * R / 8.0) / 4.0 * np.array([[m * m + 1.0, -m], [-m, 1.0]])


def eig2(m):
    """Eigenvalues of a symmetric 2x2 matrix via the quadratic formula."""
    a, b, d = m[0, 0], m[0, 1], m[1, 1]
    tr, det = a + d, a * d - b * b
    disc = math.sqrt(max(tr * tr / 4.0 - det, 0.0))
    return tr / 2.0 - disc, tr / 2.0 + disc


def bc_gaussian(m1, v1, m2, v2):
    """Bhattacharyya coefficient of two diagonal Gaussians (closed form)."""
    m1, v1, m2, v2 = (np.atleast_1d(np.asarray(a, float)) for a in (m1, v1, m2, v2))
    v = 0.5 * (v1 + v2)
    db = np.sum((m1 - m2) ** 2 / (8 * v)) + 0.5 * np.sum(np.log(v / np.sqrt(v1 * v2)))
    return float(np.exp(-db))


def bc_grid(m1, m2):
    """BC of two unit-variance 1-d Gaussians by trapezoid integration."""
    x, w = trapezoid_grid(min(m1, m2) - 14, max(m1, m2) + 14)
    return float(np.sum(w * np.exp(0.5 * (log_normal_pdf(x, m1) + log_normal_pdf(x, m2)))))


def diag_gaussian_log_partition(prec, lin):
    prec, lin = np.asarray(prec, float), np.asarray(lin, float)
    return float(np.sum(0.5 * lin ** 2 / prec + 0.5 * np.log(2 * np.pi / prec)))
