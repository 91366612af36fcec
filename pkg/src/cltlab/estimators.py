"""scikit-learn style wrappers around the functional API."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .chain import build_chain, ergodicity_constants
from .models import mc_variance_estimate
from .poisson import solve_poisson
from .rates import rate_slope_fit
from .spectral import GAP_MIN, dominant_triples, fourier_matrices


class MarkovCLT(TransformerMixin, BaseEstimator):
    """Fit a finite chain from ``(kernel, raw_observable)``; transform ``t`` into ``lambda(t)`` features.

    ``transform`` returns columns ``re_lambda, im_lambda, abs_lambda, gap``.
    """

    def __init__(self, gap_min=GAP_MIN, n_checked=200):
        self.gap_min = gap_min
        self.n_checked = n_checked

    def fit(self, X, y):
        kernel = check_array(X, dtype=float)
        obs = check_array(np.asarray(y, dtype=float).reshape(1, -1), dtype=float).ravel()
        self.chain_ = build_chain(kernel, obs)
        self.solution_ = solve_poisson(self.chain_)
        self.certificate_ = ergodicity_constants(self.chain_, self.n_checked)
        self.stationary_ = self.chain_.stationary
        self.sigma2_ = self.solution_.sigma2
        self.xi_check_ = self.solution_.xi_check
        self.psi_ = self.solution_.psi
        self.kappa0_ = self.certificate_.kappa0
        self.n_features_in_ = kernel.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "chain_")
        ts = check_array(X, dtype=float, ensure_2d=False).reshape(-1)
        lam, _, _, _, gap = dominant_triples(fourier_matrices(self.chain_, ts), self.stationary_, self.gap_min)
        return np.column_stack([lam.real, lam.imag, np.abs(lam), gap])


class AsymptoticVarianceEstimator(BaseEstimator):
    """Estimate ``sigma^2`` from an ``(n_paths, n_steps)`` array of centered observable values."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        n = X.shape[1]
        est = mc_variance_estimate(np.cumsum(X, axis=1)[:, -1], n)
        self.sigma2_ = est.sigma2_hat
        self.stderr_ = est.stderr
        self.n_paths_ = est.paths
        self.n_features_in_ = n
        return self


class RateFit(RegressorMixin, BaseEstimator):
    """Power law ``d(n) = exp(intercept) n^slope`` fitted on log-log axes."""

    def fit(self, X, y):
        n = check_array(X, dtype=float, ensure_2d=False).reshape(-1)
        d = np.asarray(y, dtype=float).reshape(-1)
        self.slope_, self.slope_stderr_, self.intercept_ = rate_slope_fit(n, d)
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "slope_")
        n = check_array(X, dtype=float, ensure_2d=False).reshape(-1)
        return np.exp(self.intercept_) * n**self.slope_
