"""Kolmogorov distances, characteristic functions of ``S_n`` and rate fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .errors import (
    AmbiguousDominant,
    BudgetExceeded,
    DegenerateVariance,
    InputError,
    NoLattice,
    NonPositiveDistance,
    SpectralGapLost,
    TooFewSamples,
)
from .fitting import loglog_fit
from .martingale import RatioTable, _max_ratio, _ratio_grid
from .models import affine_sums, finite_sums
from .spectral import GAP_MIN, default_alpha, dominant_triples, fourier_matrices

DP_BUDGET = 10**8
SIMPSON_PANELS = 4096
SIMPSON_RTOL = 1e-8
SIMPSON_MAX_PANELS = 2**17


def _law(chain, initial_law):
    if initial_law is None:
        return chain.stationary
    mu = np.asarray(initial_law, dtype=float)
    if mu.shape != (chain.n_states,):
        raise InputError("initial law has the wrong length")
    return mu


def _require_sigma(sigma):
    if not sigma > 0:
        raise DegenerateVariance("sigma must be positive")


# ---------------------------------------------------------------- characteristic functions


def charfn_S(chain, t, n, initial_law=None):
    """``E_mu[exp(i t S_n)] = mu Q(t)^n 1``."""
    if t == 0:
        return 1.0 + 0.0j
    mu = _law(chain, initial_law)
    M = fourier_matrices(chain, [t])[0]
    return complex(mu @ np.linalg.matrix_power(M, int(n)) @ np.ones(chain.n_states))


def cor41_ratio(chain, solution, n_grid, t_per_n=64):
    """``R_S(n) = max_{0 < t <= sqrt n} |E_nu exp(i t S_n/(sigma sqrt n)) - exp(-t^2/2)| sqrt(n) / t``."""
    _require_sigma(solution.sigma)
    nu, ones = chain.stationary, np.ones(chain.n_states)
    ratios, grids = [], []
    for n in n_grid:
        ts = _ratio_grid(n, t_per_n)
        Ms = fourier_matrices(chain, ts / (solution.sigma * np.sqrt(n)))
        vals = nu @ np.linalg.matrix_power(Ms, int(n)) @ ones
        ratios.append(_max_ratio(vals, ts, n))
        grids.append(ts)
    return RatioTable(np.asarray(n_grid), np.asarray(ratios), grids)


# ---------------------------------------------------------------- exact lattice law


@dataclass(frozen=True)
class LatticeDistribution:
    """Law of ``S_n``: mass ``probs[j]`` at ``offset + step * j``."""

    offset: float
    step: float
    probs: np.ndarray
    n: int

    @property
    def atoms(self):
        return self.offset + self.step * np.arange(self.probs.size)

    def charfn(self, t):
        return complex(np.sum(self.probs * np.exp(1j * t * self.atoms)))


def exact_sn_distribution(chain, n, initial_law=None, budget=DP_BUDGET):
    """Exact law of ``S_n`` by dynamic programming over (state, integer sum)."""
    lat = chain.lattice
    if lat is None:
        raise NoLattice("observable does not live on a lattice")
    mu = _law(chain, initial_law)
    k = np.asarray(lat.k, dtype=np.int64)
    width = int(n) * lat.span + 1
    if width * chain.n_states > budget:
        raise BudgetExceeded(f"{width * chain.n_states} cells exceed the budget {budget}")
    P = np.zeros((chain.n_states, width))
    P[:, 0] = mu
    QT = chain.kernel.T
    top = 0
    for _ in range(int(n)):
        R = QT @ P[:, : top + 1]
        P[:, : top + 1 + lat.span] = 0.0
        for y in range(chain.n_states):
            P[y, k[y] : k[y] + top + 1] = R[y]
        top += lat.span
    probs = P.sum(axis=0)
    return LatticeDistribution(offset=int(n) * lat.offset, step=lat.step, probs=probs, n=int(n))


# ---------------------------------------------------------------- distances


def kolmogorov_distance(dist, sigma):
    """``sup_x |P(S_n / (sigma sqrt n) <= x) - Phi(x)|`` for a lattice law.

    The supremum of a step CDF against a continuous one is attained at an
    atom, from the left or the right, so both sides are checked.
    """
    _require_sigma(sigma)
    x = dist.atoms / (sigma * math.sqrt(max(dist.n, 1)))
    F = np.cumsum(dist.probs)
    F = np.minimum(F / F[-1], 1.0)
    before = np.concatenate(([0.0], F[:-1]))
    phi = ndtr(x)
    return float(max(np.max(np.abs(F - phi)), np.max(np.abs(before - phi))))


def dkw_epsilon(m, delta):
    return math.sqrt(math.log(2.0 / delta) / (2.0 * m))


def empirical_kolmogorov(samples, delta=0.05):
    """Empirical-CDF distance to ``Phi`` and the DKW half-width."""
    y = np.sort(np.asarray(samples, dtype=float).ravel())
    m = y.size
    if m < 100:
        raise TooFewSamples(f"need at least 100 samples, got {m}")
    if not 0 < delta < 1:
        raise InputError("delta must lie in (0, 1)")
    vals, counts = np.unique(y, return_counts=True)
    after = np.cumsum(counts) / m
    before = after - counts / m
    phi = ndtr(vals)
    dist = float(max(np.max(np.abs(after - phi)), np.max(np.abs(before - phi))))
    return dist, dkw_epsilon(m, delta)


# ---------------------------------------------------------------- Berry-Esseen integral


@dataclass(frozen=True)
class BerryEsseenIntegral:
    """``A_n`` and its spectral bound ``I_n + J_n + K_n``.

    ``residual`` is the largest pointwise gap between the integrand of
    ``A_n`` and the signed sum of the three spectral pieces; it is zero up
    to roundoff because the pieces add up exactly before taking moduli.
    """

    A_n: float
    I_n: float
    J_n: float
    K_n: float
    alpha: float
    n: int
    panels: int
    residual: float

    @property
    def bound(self):
        return self.I_n + self.J_n + self.K_n


def _be_pieces(chain, solution, mu, n, ts, gap_min):
    us = ts / (solution.sigma * math.sqrt(n))
    mats = fourier_matrices(chain, us)
    try:
        lam, v, phi, N, _ = dominant_triples(mats, chain.stationary, gap_min)
    except AmbiguousDominant as exc:
        raise SpectralGapLost(str(exc)) from None
    ones = np.ones(chain.n_states)
    total = mu @ np.linalg.matrix_power(mats, n) @ ones
    gauss = np.exp(-ts * ts / 2.0)
    lam_n = lam**n
    L = phi.sum(axis=1) * (v @ mu) - 1.0
    rem = mu @ np.linalg.matrix_power(N, n) @ ones
    pieces = np.stack([total - gauss, lam_n - gauss, lam_n * L, rem])
    resid = np.abs(pieces[0] - pieces[1] - pieces[2] - pieces[3])
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.abs(pieces) / np.abs(ts)
    vals[:, ts == 0] = 0.0
    return vals, float(resid.max())


def _simpson(y, h):
    return h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())


def berry_esseen_integral(
    chain,
    solution,
    alpha=None,
    n=64,
    initial_law=None,
    gap_min=GAP_MIN,
    panels=SIMPSON_PANELS,
    rtol=SIMPSON_RTOL,
    max_panels=SIMPSON_MAX_PANELS,
):
    """Composite Simpson evaluation of ``A_n``, ``I_n``, ``J_n``, ``K_n``.

    Integration runs over ``|t| <= alpha sigma sqrt(n)`` so that the spectral
    parameter ``u = t / (sigma sqrt n)`` stays in ``[-alpha, alpha]``. Panels
    double until every integral changes by less than ``rtol`` relatively.
    """
    _require_sigma(solution.sigma)
    mu = _law(chain, initial_law)
    n = int(n)
    if alpha is None:
        alpha = default_alpha(chain, solution, gap_min)
    T = alpha * solution.sigma * math.sqrt(n)
    prev = None
    worst = 0.0
    while True:
        ts = np.linspace(-T, T, panels + 1)
        vals, resid = _be_pieces(chain, solution, mu, n, ts, gap_min)
        worst = max(worst, resid)
        cur = np.array([_simpson(row, ts[1] - ts[0]) for row in vals])
        if prev is not None:
            change = np.abs(cur - prev) / np.maximum(np.abs(cur), 1e-300)
            if np.all((change < rtol) | (np.abs(cur - prev) < 1e-15)) or panels >= max_panels:
                break
        elif panels >= max_panels:
            break
        prev = cur
        panels *= 2
    return BerryEsseenIntegral(
        A_n=float(cur[0]),
        I_n=float(cur[1]),
        J_n=float(cur[2]),
        K_n=float(cur[3]),
        alpha=float(alpha),
        n=n,
        panels=int(panels),
        residual=worst,
    )


# ---------------------------------------------------------------- slope fits and reports


def rate_slope_fit(n_grid, distances):
    """OLS fit of ``log d`` on ``log n``; returns ``(slope, stderr, intercept)``."""
    n_grid = np.asarray(n_grid, dtype=float)
    d = np.asarray(distances, dtype=float)
    if n_grid.size < 4 or n_grid.size != d.size:
        raise InputError("need at least four (n, distance) pairs")
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise NonPositiveDistance("all distances must be positive and finite")
    fit = loglog_fit(n_grid, d)
    return fit.slope, fit.stderr, fit.intercept


@dataclass(frozen=True)
class RateReport:
    n_grid: np.ndarray
    distances: np.ndarray
    methods: tuple
    dkw_band: np.ndarray
    slope: float
    slope_stderr: float
    intercept: float
    residuals: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def method(self):
        kinds = set(self.methods)
        return self.methods[0] if len(kinds) == 1 else "mixed"

    def rows(self):
        out = []
        for n, d, m, b in zip(self.n_grid, self.distances, self.methods, self.dkw_band):
            out.append(
                {
                    "n": int(n),
                    "distance": float(d),
                    "method": m,
                    "band_low": float(max(d - b, 0.0)),
                    "band_high": float(d + b),
                }
            )
        return out

    def summary(self):
        return {
            "method": self.method,
            "slope": self.slope,
            "slope_stderr": self.slope_stderr,
            "intercept": self.intercept,
            "residuals": [float(r) for r in self.residuals],
            **self.meta,
        }


def _finish(n_grid, dists, methods, bands, meta):
    n_grid = np.asarray(n_grid)
    dists = np.asarray(dists, dtype=float)
    if n_grid.size >= 4:
        fit = loglog_fit(n_grid, dists) if np.all(dists > 0) else None
        if fit is None:
            raise NonPositiveDistance("a distance vanished; cannot fit a slope")
        slope, se, icpt, resid = fit.slope, fit.stderr, fit.intercept, fit.residuals
    else:
        slope = se = icpt = float("nan")
        resid = np.full(n_grid.size, np.nan)
    return RateReport(n_grid, dists, tuple(methods), np.asarray(bands, dtype=float), slope, se, icpt, resid, meta)


def chain_rate_report(
    chain,
    solution,
    n_grid,
    initial_law=None,
    budget=DP_BUDGET,
    paths=10**4,
    master_seed=0,
    delta=0.05,
    workers=1,
):
    """Distances for a finite chain: exact DP when the lattice law fits the budget, else MC with DKW."""
    _require_sigma(solution.sigma)
    dists, methods, bands = [], [], []
    for n in n_grid:
        try:
            law = exact_sn_distribution(chain, n, initial_law, budget)
            dists.append(kolmogorov_distance(law, solution.sigma))
            methods.append("exact-DP")
            bands.append(0.0)
        except (NoLattice, BudgetExceeded):
            sums = finite_sums(chain, int(n), master_seed, range(paths), initial_law, workers=workers)
            d, eps = empirical_kolmogorov(sums / (solution.sigma * math.sqrt(n)), delta)
            dists.append(d)
            methods.append("mc-dkw")
            bands.append(eps)
    return _finish(n_grid, dists, methods, bands, {"sigma2": solution.sigma2})


def affine_rate_report(model, sigma2, n_grid, paths=10**4, master_seed=0, center=None, delta=0.05, workers=1):
    """Empirical distances for an affine model with a known or estimated ``sigma2``."""
    sigma = math.sqrt(sigma2)
    _require_sigma(sigma)
    dists, bands = [], []
    for n in n_grid:
        sums = affine_sums(model, int(n), master_seed, range(paths), center=center, workers=workers)
        d, eps = empirical_kolmogorov(sums / (sigma * math.sqrt(n)), delta)
        dists.append(d)
        bands.append(eps)
    meta = {"sigma2": float(sigma2), "paths": int(paths), "master_seed": int(master_seed)}
    return _finish(n_grid, dists, ["mc-dkw"] * len(dists), bands, meta)


def rate_svg(report: RateReport, title: Optional[str] = None):
    """Log-log plot of distances with the fitted line as a standalone SVG string."""
    from .report import loglog_svg

    return loglog_svg(
        report.n_grid,
        report.distances,
        fit=(report.slope, report.intercept),
        title=title or f"Kolmogorov distance, slope {report.slope:.4g}",
    )
