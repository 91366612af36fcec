"""Poisson equation, asymptotic variance and the conditional-variance fluctuation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import ergodicity_constants
from .errors import SingularSystem

NEG_VARIANCE_TOL = 1e-12


@dataclass(frozen=True)
class PoissonSolution:
    """Solution of ``h - Q h = xi`` with ``nu(h) = 0`` and derived quantities.

    Attributes
    ----------
    xi_check : ndarray
        The solution ``h``.
    q_xi_check : ndarray
        ``Q h``.
    sigma2 : float
        Asymptotic variance ``nu(h^2) - nu((Qh)^2)``, clamped at 0.
    psi : ndarray
        ``Q(h^2) - (Qh)^2 - sigma2``; ``nu(psi) = 0``.
    degenerate : bool
        True when ``sigma2`` is zero up to roundoff.
    """

    xi_check: np.ndarray
    q_xi_check: np.ndarray
    sigma2: float
    psi: np.ndarray
    degenerate: bool = False

    @property
    def sigma(self):
        return float(np.sqrt(self.sigma2))


@dataclass(frozen=True)
class H2Series:
    terms: np.ndarray
    ratio: float
    total: float


@dataclass(frozen=True)
class VarianceConsistency:
    ratio: float
    var_over_n: float
    degenerate: bool = False


def fundamental_solve(chain, rhs):
    """Solve ``(I - Q) x = rhs`` under ``nu(x) = 0`` for ``nu``-centered ``rhs``.

    Uses the fundamental matrix ``I - Q + 1 nu``, which is invertible exactly
    when 1 is a simple eigenvalue of ``Q``.
    """
    Q, nu = chain.kernel, chain.stationary
    d = chain.n_states
    Z = np.eye(d) - Q + np.outer(np.ones(d), nu)
    try:
        x = np.linalg.solve(Z, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from None
    if not np.all(np.isfinite(x)):
        raise SingularSystem("non-finite solution of the Poisson equation")
    return x


def solve_poisson(chain):
    """Solve the Poisson equation for ``chain.observable``.

    Raises :class:`~cltlab.errors.NoSpectralGap` when the chain has no gap.
    """
    ergodicity_constants(chain, n_max=1)
    Q, nu, xi = chain.kernel, chain.stationary, chain.observable
    h = fundamental_solve(chain, xi)
    qh = Q @ h
    sigma2 = float(nu @ (h * h) - nu @ (qh * qh))
    degenerate = sigma2 <= NEG_VARIANCE_TOL
    if sigma2 < -NEG_VARIANCE_TOL:
        raise SingularSystem(f"negative asymptotic variance {sigma2:.3e}")
    sigma2 = max(sigma2, 0.0)
    psi = Q @ (h * h) - qh * qh - sigma2
    return PoissonSolution(xi_check=h, q_xi_check=qh, sigma2=sigma2, psi=psi, degenerate=degenerate)


def h2_series(chain, solution, p_max=60):
    """Terms ``a_p = nu(|Q^p psi|^{3/2})^{2/3}`` for ``p = 0..p_max``.

    ``ratio`` is the geometric decay rate fitted by least squares on
    ``log a_p`` over terms above 1e-14 (nan if fewer than two such terms);
    ``total`` is the sum of the terms.
    """
    Q, nu = chain.kernel, chain.stationary
    f = np.asarray(solution.psi, dtype=float)
    terms = np.empty(p_max + 1)
    for p in range(p_max + 1):
        terms[p] = (nu @ np.abs(f) ** 1.5) ** (2.0 / 3.0)
        f = Q @ f
    keep = np.flatnonzero(terms > 1e-14)
    if keep.size >= 2:
        slope = np.polyfit(keep, np.log(terms[keep]), 1)[0]
        ratio = float(np.exp(slope))
    else:
        ratio = float("nan")
    return H2Series(terms=terms, ratio=ratio, total=float(terms.sum()))


def autocovariances(chain, n_lags):
    """Stationary autocovariances ``gamma(h) = nu(xi * Q^h xi)`` for ``h < n_lags``."""
    Q, nu, xi = chain.kernel, chain.stationary, chain.observable
    out = np.empty(n_lags)
    f = xi.copy()
    for h in range(n_lags):
        out[h] = nu @ (xi * f)
        f = Q @ f
    return out


def variance_consistency(chain, solution, n):
    """Ratio of the exact ``Var_nu(S_n) / n`` to ``sigma2``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    gamma = autocovariances(chain, n)
    h = np.arange(1, n)
    var_n = float(gamma[0] + 2.0 * np.sum((1.0 - h / n) * gamma[1:]))
    if solution.degenerate or solution.sigma2 == 0.0:
        return VarianceConsistency(ratio=float("nan"), var_over_n=var_n, degenerate=True)
    return VarianceConsistency(ratio=var_n / solution.sigma2, var_over_n=var_n)


def poisson_report(chain, solution, p_max=60):
    h2 = h2_series(chain, solution, p_max)
    return {
        "sigma2": solution.sigma2,
        "psi_l_inf": float(np.max(np.abs(solution.psi))),
        "h2_terms": h2.terms.tolist(),
        "h2_total": h2.total,
    }
