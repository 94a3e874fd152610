"""Scikit-learn style density estimator fitted by noise-contrastive estimation."""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted

from . import expfam
from .exceptions import ConfigError, DomainError, SingularHessianError
from .expfam import DiagGaussian
from .numerics import logistic
from .objective import Batch, ClipPolicy, LossKind, batch_evaluation
from .optim import AlgoConfig, run


class _FixedBatch:
    """Objective view of one fixed (data, noise) batch for :func:`optim.run`."""

    def __init__(self, kind, family, tau_q, batch, clip):
        self.loss_kind, self.family, self.tau_q = kind, family, tau_q
        self.batch, self.clip = batch, clip

    def evaluate(self, tau, order=2):
        return batch_evaluation(self.loss_kind, self.family, self.tau_q, tau, self.batch, self.clip, order)


class NCEDensityEstimator(DensityMixin, BaseEstimator):
    """Diagonal Gaussian density with a learned log-normalizer.

    The model is ``log p(x) = theta^T T(x) - alpha`` where ``alpha`` is a
    free parameter, so it is fitted as an unnormalized model: NCE learns the
    normalizer by classifying data against draws from a fixed Gaussian noise
    distribution.

    Parameters
    ----------
    loss : {"nce", "ence"}
        Logistic NCE loss or its exponential variant.
    algo : {"newton", "ngd", "gd"}
        Optimizer applied to the empirical loss.
    eta : float
        Step size.  Newton with ``eta=1`` is the usual choice.
    max_iter : int
        Optimizer steps.
    noise_mean, noise_var : float, array or None
        Noise distribution.  ``None`` uses the per-feature sample mean and
        variance of the training data.
    log_ratio_cap : float or None
        Clamp on the log density ratio used for per-sample weights.
    tol : float
        Stop once the gradient norm falls below this value.
    random_state : int, RandomState or None
        Seeds the noise draws.

    Attributes
    ----------
    theta_ : ndarray of shape (2 * n_features,)
        Natural parameters: precisions, then ``precision * mean``.
    alpha_ : float
        Learned log-normalizer.
    means_, variances_ : ndarray of shape (n_features,)
        Mean-space view of ``theta_`` (NaN where a precision is not positive).
    n_iter_ : int
    converged_ : bool
    """

    def __init__(self, loss="nce", algo="newton", eta=1.0, max_iter=50, noise_mean=None, noise_var=None,
                 log_ratio_cap=None, tol=1e-10, random_state=None):
        self.loss = loss
        self.algo = algo
        self.eta = eta
        self.max_iter = max_iter
        self.noise_mean = noise_mean
        self.noise_var = noise_var
        self.log_ratio_cap = log_ratio_cap
        self.tol = tol
        self.random_state = random_state

    def _noise_tau(self, X):
        d = X.shape[1]
        mean = np.mean(X, axis=0) if self.noise_mean is None else np.broadcast_to(self.noise_mean, (d,))
        var = np.var(X, axis=0) if self.noise_var is None else np.broadcast_to(self.noise_var, (d,))
        var = np.asarray(var, dtype=float)
        if np.any(var <= 0):
            raise ConfigError("noise variances must be positive; constant features need an explicit noise_var")
        return expfam.tau_of_theta(self.family_, np.concatenate([mean, var]))

    def fit(self, X, y=None):
        """Fit the model to the rows of ``X``; ``y`` is ignored."""
        X = check_array(X, ensure_min_samples=2)
        kind = LossKind.parse(self.loss)
        rng = check_random_state(self.random_state)
        self.n_features_in_ = X.shape[1]
        self.family_ = DiagGaussian(X.shape[1])
        tau_q = self._noise_tau(X)
        gen = np.random.Generator(np.random.PCG64(rng.randint(2**31)))
        batch = Batch(X, expfam.draw(self.family_, tau_q, len(X), gen))
        self.noise_tau_ = tau_q.vector
        obj = _FixedBatch(kind, self.family_, tau_q, batch, ClipPolicy(log_ratio_cap=self.log_ratio_cap))
        try:
            trace = run(obj, AlgoConfig(self.algo, self.eta, int(self.max_iter), grad_tol=self.tol), tau_q)
        except SingularHessianError as exc:
            # keep the last iterate; more data or a first-order algo is needed
            trace = exc.trace
            warnings.warn(f"stopped early: {exc}", ConvergenceWarning, stacklevel=2)
        tau = trace.records[-1].tau
        self.theta_, self.alpha_ = tau[:-1].copy(), float(tau[-1])
        self.n_iter_ = trace.records[-1].step
        self.converged_ = trace.status == "converged"
        self.loss_curve_ = np.asarray(trace.losses)
        d = self.n_features_in_
        prec = self.theta_[:d]
        with np.errstate(divide="ignore", invalid="ignore"):
            self.variances_ = np.where(prec > 0, 1.0 / prec, np.nan)
            self.means_ = np.where(prec > 0, self.theta_[d:] / prec, np.nan)
        return self

    def _tau(self):
        return np.append(self.theta_, self.alpha_)

    def _check_X(self, X):
        check_is_fitted(self, "theta_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but {type(self).__name__} is expecting "
                             f"{self.n_features_in_} features as input")
        return X

    def score_samples(self, X):
        """Model log density of each row, using the learned normalizer."""
        X = self._check_X(X)
        return expfam.log_pdf(self.family_, self._tau(), X)

    def score(self, X, y=None):
        """Mean log density of ``X``."""
        return float(np.mean(self.score_samples(X)))

    def log_normalizer_error(self):
        """Learned minus exact log partition; NaN if some precision is not positive."""
        check_is_fitted(self, "theta_")
        try:
            return self.alpha_ - self.family_.log_partition(self.theta_)
        except DomainError:
            return float("nan")

    def predict_proba(self, X):
        """Posterior of (noise, data) under a balanced mixture, one row per sample."""
        X = self._check_X(X)
        z = expfam.suff_stats(self.family_, X) @ (self._tau() - self.noise_tau_)
        p = logistic(z)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        """1 for samples classified as data, 0 for noise."""
        return (self.predict_proba(X)[:, 1] > 0.5).astype(int)
