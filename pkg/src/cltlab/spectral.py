"""Fourier kernels ``Q(t) = Q diag(exp(i t xi))`` and their perturbed spectral data.

For ``t`` near 0 the twisted kernel has a simple dominant eigenvalue
``lambda(t)`` with right vector ``v(t)``, left functional ``phi(t)`` and a
remainder ``N(t)`` such that::

    Q(t)^n f = lambda(t)^n <phi(t), f> v(t) + N(t)^n f

Pairings ``<a, b>`` are bilinear (no conjugation). Eigenvectors are
normalized by ``<nu, v> = 1`` and ``<phi, v> = 1``, which keeps
``t -> (lambda, v, phi)`` continuous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chain import operator_norm_w
from .errors import (
    AmbiguousDominant,
    ContractionFailure,
    DegenerateVariance,
    EigenvalueOnContour,
    EnclosureViolation,
    InputError,
    NoContractingPower,
    NormalizationFailure,
    SingularResolvent,
)
from .fitting import loglog_fit

GAP_MIN = 1e-6
COND_MAX = 1e12


@dataclass(frozen=True)
class FourierKernel:
    t: float
    matrix: np.ndarray


@dataclass(frozen=True)
class SpectralTriple:
    t: float
    lam: complex
    v: np.ndarray
    phi: np.ndarray
    remainder: np.ndarray
    gap: float


def fourier_matrices(chain, ts):
    """Stack of ``Q(t)`` for every ``t`` in ``ts``; shape ``(len(ts), d, d)``."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    phase = np.exp(1j * ts[:, None] * chain.observable[None, :])
    return chain.kernel[None, :, :] * phase[:, None, :]


def fourier_kernel(chain, t):
    return FourierKernel(t=float(t), matrix=fourier_matrices(chain, [t])[0])


def _top_two(w):
    order = np.argsort(-np.abs(w), axis=-1, kind="stable")
    first = np.take_along_axis(w, order[..., :1], axis=-1)[..., 0]
    if w.shape[-1] > 1:
        second = np.abs(np.take_along_axis(w, order[..., 1:2], axis=-1)[..., 0])
    else:
        second = np.zeros(first.shape)
    return order[..., 0], first, second


def dominant_triples(matrices, nu, gap_min=GAP_MIN):
    """Vectorized dominant eigen-triples of a stack of matrices.

    Returns ``(lam, v, phi, N, gap)`` with leading axis over the stack.
    """
    M = np.asarray(matrices, dtype=complex)
    w, V = np.linalg.eig(M)
    wl, VL = np.linalg.eig(np.swapaxes(M, -1, -2))
    i1, lam, second = _top_two(w)
    gap = np.abs(lam) - second
    bad = np.flatnonzero(gap < gap_min)
    if bad.size:
        raise AmbiguousDominant(f"dominant eigenvalue not separated (gap {gap[bad[0]]:.3e})")
    idx = np.arange(M.shape[0])
    v = V[idx, :, i1]
    j1 = np.argmin(np.abs(wl - lam[:, None]), axis=1)
    phi = VL[idx, :, j1]
    s = v @ nu
    if np.any(np.abs(s) < 1e-8 * np.linalg.norm(v, axis=1)):
        raise NormalizationFailure("<nu, v(t)> vanishes; t is outside the perturbative range")
    v = v / s[:, None]
    phi = phi / np.sum(phi * v, axis=1)[:, None]
    N = M - lam[:, None, None] * v[:, :, None] * phi[:, None, :]
    return lam, v, phi, N, gap


def dominant_triple(kernel, chain, gap_min=GAP_MIN, t_max=None):
    """Dominant eigenvalue, normalized eigenvectors and remainder of ``Q(t)``."""
    if t_max is not None and abs(kernel.t) > t_max:
        raise InputError(f"|t| = {abs(kernel.t)} exceeds t_max = {t_max}")
    lam, v, phi, N, gap = dominant_triples(kernel.matrix[None], chain.stationary, gap_min)
    return SpectralTriple(
        t=kernel.t, lam=complex(lam[0]), v=v[0], phi=phi[0], remainder=N[0], gap=float(gap[0])
    )


def triple_at(chain, t, gap_min=GAP_MIN):
    return dominant_triple(fourier_kernel(chain, t), chain, gap_min)


def default_t_max(solution):
    return 0.5 / solution.sigma if solution.sigma2 > 0 else math.inf


def decomposition_residual(chain, t, n_max, trials=16, seed=0):
    """Largest relative defect of the spectral decomposition of ``Q(t)^n``.

    Compares the directly iterated ``Q(t)^n f`` against
    ``lambda^n <phi, f> v + N^n f`` for ``n <= n_max`` and random ``f``.
    """
    tr = triple_at(chain, t)
    M = fourier_kernel(chain, t).matrix
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((chain.n_states, trials)).astype(complex)
    coef = tr.phi @ F
    norms = np.max(np.abs(F), axis=0)
    direct, rem = F.copy(), F.copy()
    worst = 0.0
    for n in range(1, n_max + 1):
        direct = M @ direct
        rem = tr.remainder @ rem
        spectral = tr.lam**n * np.outer(tr.v, coef) + rem
        worst = max(worst, float(np.max(np.max(np.abs(direct - spectral), axis=0) / norms)))
    return worst


def _default_radius(chain):
    w = np.linalg.eigvals(chain.kernel)
    i_one = int(np.argmin(np.abs(w - 1.0)))
    rest = np.delete(w, i_one)
    return 0.5 * float(np.min(np.abs(1.0 - rest))) if rest.size else 0.5


def contour_projector(chain, t, center=1.0, radius=None, m=128):
    """Spectral projector ``(2 pi i)^{-1} \\oint (z - Q(t))^{-1} dz`` by the trapezoid rule.

    The default contour is the circle around 1 whose radius is half the
    distance from 1 to the nearest other eigenvalue of ``Q``.
    """
    if m < 16:
        raise InputError("m must be >= 16")
    if radius is None:
        radius = _default_radius(chain)
    M = fourier_kernel(chain, t).matrix
    d = chain.n_states
    theta = 2.0 * np.pi * np.arange(m) / m
    rot = np.exp(1j * theta)
    z = center + radius * rot
    A = z[:, None, None] * np.eye(d)[None] - M[None]
    cond = np.linalg.cond(A)
    if np.any(~np.isfinite(cond)) or np.any(cond > COND_MAX):
        raise EigenvalueOnContour(f"resolvent condition number {np.max(cond):.3e} on the contour")
    R = np.linalg.inv(A)
    Pi = np.tensordot(radius * rot / m, R, axes=(0, 0))
    tr = complex(np.trace(Pi))
    if abs(tr - 1.0) > 1e-6:
        raise EnclosureViolation(f"trace of projector is {tr:.6g}, expected 1")
    return Pi


def resolvent_perturbation(chain, z, t, trials=64, seed=0):
    """``sup_f nu(|(z - Q(t))^{-1} f - (z - Q)^{-1} f|)`` over random ``||f||_W = 1``."""
    d = chain.n_states
    I = np.eye(d)
    A_t = z * I - fourier_kernel(chain, t).matrix
    A_0 = z * I - chain.kernel
    for A in (A_t, A_0):
        c = np.linalg.cond(A)
        if not np.isfinite(c) or c > COND_MAX:
            raise SingularResolvent(f"z = {z} is (numerically) in the spectrum")
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((d, trials))
    F /= np.max(np.abs(F) / chain.weight[:, None], axis=0)
    diff = np.linalg.solve(A_t, F) - np.linalg.solve(A_0, F)
    return float(np.max(chain.stationary @ np.abs(diff)))


def fit_exponent(ts, values):
    """Power-law exponent and constant of ``values ~ C |t|^e``."""
    fit = loglog_fit(np.abs(ts), values)
    return fit.slope, fit.constant


@dataclass(frozen=True)
class LambdaExpansion:
    second_deriv: float
    third_order_coeff: float
    coefficients: np.ndarray
    residuals: np.ndarray


def default_u_grid(u_max=0.05, points=10):
    pos = np.linspace(u_max / points, u_max, points)
    return np.concatenate([-pos[::-1], pos])


def lambda_expansion(chain, solution, u_grid=None):
    """Fit ``lambda(u) = 1 + c2 u^2 + c3 u^3 + c4 u^4`` by least squares.

    Real and imaginary parts share one design matrix. Returns ``-2 Re c2``
    (which should equal ``sigma2``) and ``Im c3``.
    """
    if solution.degenerate:
        raise DegenerateVariance("asymptotic variance is zero")
    u = default_u_grid() if u_grid is None else np.asarray(u_grid, dtype=float)
    if np.any(u == 0):
        raise InputError("u_grid must exclude 0")
    lam = dominant_triples(fourier_matrices(chain, u), chain.stationary)[0]
    X = np.column_stack([u**2, u**3, u**4])
    Y = np.column_stack([lam.real - 1.0, lam.imag])
    coef, *_ = np.linalg.lstsq(X, Y, rcond=None)
    c = coef[:, 0] + 1j * coef[:, 1]
    resid = (lam - 1.0) - X @ c
    return LambdaExpansion(
        second_deriv=float(-2.0 * c[0].real),
        third_order_coeff=float(c[1].imag),
        coefficients=c,
        residuals=resid,
    )


def h3_check(chain, t_grid):
    """``sup_t nu(|exp(i t xi) - 1| W) / |t|`` over the nonzero grid points."""
    t = np.asarray(t_grid, dtype=float)
    t = t[t != 0]
    xi, nu, W = chain.observable, chain.stationary, chain.weight
    vals = np.abs(np.exp(1j * t[:, None] * xi[None, :]) - 1.0) @ (nu * W) / np.abs(t)
    return float(vals.max()) if vals.size else 0.0


@dataclass(frozen=True)
class H4Bound:
    C: float
    kappa: float


def second_moduli(chain, t_grid):
    w = np.linalg.eigvals(fourier_matrices(chain, t_grid))
    return _top_two(w)[2]


def h4_uniform_bound(chain, t_grid, n_max=50):
    """Constants of ``||Q(t)^n f||_W <= C kappa^n ||f||_W + C nu(|f|)`` on the grid.

    ``kappa`` is the largest second-eigenvalue modulus over the grid plus
    1e-6; ``C`` is the smallest constant that works for canonical basis
    vectors and ``n <= n_max``.
    """
    ts = np.atleast_1d(np.asarray(t_grid, dtype=float))
    kappa = float(second_moduli(chain, ts).max()) + 1e-6
    if kappa >= 1.0 - 1e-9:
        raise ContractionFailure(f"second eigenvalue modulus reaches {kappa:.12g}")
    W, nu = chain.weight, chain.stationary
    C = 0.0
    for M in fourier_matrices(chain, ts):
        P = np.eye(chain.n_states, dtype=complex)
        for n in range(1, n_max + 1):
            P = M @ P
            col_norms = np.max(np.abs(P) / W[:, None], axis=0)
            C = max(C, float(np.max(col_norms / (kappa**n / W + nu))))
    return H4Bound(C=C, kappa=kappa)


@dataclass(frozen=True)
class DoeblinCertificate:
    ell: int
    bound: float
    worst_set_value: float
    fractional_value: float
    contraction: float


def _fractional_knapsack(values, weights, capacity):
    order = np.argsort(-(values / weights), kind="stable")
    total, room = 0.0, capacity
    for i in order:
        if values[i] <= 0 or room <= 0:
            break
        take = min(1.0, room / weights[i])
        total += take * values[i]
        room -= take * weights[i]
    return total


def _best_subset(values, weights, capacity):
    """Exact 0/1 knapsack by depth-first branch and bound.

    Candidate sets are re-scored with ``math.fsum`` over sorted indices so the
    result is reproducible by plain enumeration.
    """
    order = [int(i) for i in np.argsort(-(values / weights), kind="stable") if values[i] > 0]
    best_val, best_set = 0.0, ()

    def bound(k, val, room):
        for i in order[k:]:
            if weights[i] <= room:
                val += values[i]
                room -= weights[i]
            else:
                return val + values[i] * room / weights[i]
        return val

    def score(chosen):
        idx = sorted(chosen)
        return math.fsum(values[i] for i in idx), math.fsum(weights[i] for i in idx)

    def slack():
        # running float sums can sit an ulp away from the fsum scores
        return 1e-12 * (1.0 + best_val)

    def dfs(k, chosen, val, room):
        nonlocal best_val, best_set
        if val >= best_val - slack():
            exact_val, exact_w = score(chosen)
            if exact_w <= capacity and exact_val > best_val:
                best_val, best_set = exact_val, tuple(sorted(chosen))
        if k == len(order) or bound(k, val, room) < best_val - slack():
            return
        i = order[k]
        if weights[i] <= room and score(chosen + [i])[1] <= capacity:
            dfs(k + 1, chosen + [i], val + values[i], room - weights[i])
        dfs(k + 1, chosen, val, room)

    dfs(0, [], 0.0, capacity)
    return best_val, best_set


def doeblin_ess_bound(chain, max_ell=64):
    """Doeblin-type certificate bounding the essential spectral radius by ``(3/4)^(1/ell)``.

    ``ell`` is the smallest power with ``||Q^ell - 1 nu||_W <= 1/2``. For every
    start state ``x`` the largest mass ``Qw^ell(x, A)`` of the weighted kernel
    ``Qw(x, y) = W(y) Q(x, y) / W(x)`` over sets with
    ``nu_w(A) = nu(W 1_A) / nu(W) <= 1 / (4 nu(W))`` is computed both exactly
    and through the fractional relaxation.
    """
    Q, nu, W = chain.kernel, chain.stationary, chain.weight
    d = chain.n_states
    proj = np.outer(np.ones(d), nu)
    P = np.eye(d)
    for ell in range(1, max_ell + 1):
        P = P @ Q
        contraction = operator_norm_w(P - proj, W)
        if contraction <= 0.5:
            break
    else:
        raise NoContractingPower(f"no power <= {max_ell} contracts by 1/2")
    nu_w = float(nu @ W)
    weights = nu * W / nu_w
    capacity = 1.0 / (4.0 * nu_w)
    tilde = P * W[None, :] / W[:, None]
    exact = max(_best_subset(row, weights, capacity)[0] for row in tilde)
    frac = max(_fractional_knapsack(row, weights, capacity) for row in tilde)
    return DoeblinCertificate(
        ell=ell,
        bound=0.75 ** (1.0 / ell),
        worst_set_value=float(exact),
        fractional_value=float(frac),
        contraction=float(contraction),
    )


def modulus_domination_gap(chain, t_grid, n_max=10, trials=20, seed=0):
    """Largest value of ``|Q(t)^n f| - Q^n |f|`` (entrywise); should be <= 0."""
    rng = np.random.default_rng(seed)
    d = chain.n_states
    F = rng.standard_normal((d, trials)) + 1j * rng.standard_normal((d, trials))
    worst = -np.inf
    for M in fourier_matrices(chain, t_grid):
        a, b = F.copy(), np.abs(F)
        for _ in range(n_max):
            a = M @ a
            b = chain.kernel @ b
            worst = max(worst, float(np.max(np.abs(a) - b)))
    return worst


def default_alpha(chain, solution, gap_min=GAP_MIN, points=64):
    """Largest ``alpha <= 0.5 / sigma`` with a dominant gap on ``[-alpha, alpha]``."""
    top = default_t_max(solution)
    us = top * np.arange(1, points + 1) / points
    w = np.linalg.eigvals(fourier_matrices(chain, us))
    _, lam, second = _top_two(w)
    ok = np.abs(lam) - second >= gap_min
    if not ok[0]:
        raise AmbiguousDominant("no spectral gap next to t = 0")
    last = points if ok.all() else int(np.argmin(ok))
    return float(us[last - 1])


def gaussian_domination(chain, solution, alpha, points=64):
    """``max_u |lambda(u)| exp(sigma2 u^2 / 4)`` for ``0 < |u| <= alpha``.

    A value ``<= 1`` means ``|lambda(t / (sigma sqrt n))|^n <= exp(-t^2 / 4)``
    whenever ``|t / (sigma sqrt n)| <= alpha``.
    """
    us = alpha * np.arange(1, points + 1) / points
    lam = dominant_triples(fourier_matrices(chain, us), chain.stationary)[0]
    return float(np.max(np.abs(lam) * np.exp(solution.sigma2 * us**2 / 4.0)))


@dataclass(frozen=True)
class PerturbationFit:
    ts: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    b3: np.ndarray
    exponents: dict
    constants: dict
    rho: float


def perturbation_profile(chain, t_grid, n_max=30):
    """Values of the three perturbation quantities on a grid of nonzero ``t``.

    ``b1 = nu(|v(t) - 1|)``, ``b2 = |<phi(t), 1> - 1|`` and
    ``b3 = max_n nu(|N(t)^n 1|) / rho^n`` with ``rho = kappa + 0.1``. Each is
    fitted to ``C |t|^e``.
    """
    ts = np.asarray(t_grid, dtype=float)
    ts = ts[ts != 0]
    nu = chain.stationary
    kappa = h4_uniform_bound(chain, ts, n_max=1).kappa
    rho = kappa + 0.1
    _, v, phi, N, _ = dominant_triples(fourier_matrices(chain, ts), nu)
    b1 = np.abs(v - 1.0) @ nu
    b2 = np.abs(phi.sum(axis=1) - 1.0)
    b3 = np.zeros(ts.size)
    x = np.ones((ts.size, chain.n_states), dtype=complex)
    for n in range(1, n_max + 1):
        x = np.einsum("tij,tj->ti", N, x)
        b3 = np.maximum(b3, (np.abs(x) @ nu) / rho**n)
    exps, consts = {}, {}
    for name, vals in (("b1", b1), ("b2", b2), ("b3", b3)):
        if np.all(vals > 0):
            exps[name], consts[name] = fit_exponent(ts, vals)
        else:
            exps[name], consts[name] = math.inf, 0.0
    return PerturbationFit(ts, b1, b2, b3, exps, consts, rho)


def spectral_scan(chain, t_grid, n_max=30, seed=0):
    """Rows for the spectral CSV report, one per grid point."""
    ts = np.asarray(t_grid, dtype=float)
    lam, _, _, _, gap = dominant_triples(fourier_matrices(chain, ts), chain.stationary)
    nz = ts != 0
    prof = perturbation_profile(chain, ts[nz], n_max) if nz.any() else None
    rows = []
    k = 0
    for i, t in enumerate(ts):
        if nz[i]:
            b = (prof.b1[k], prof.b2[k], prof.b3[k])
            k += 1
        else:
            b = (0.0, 0.0, 0.0)
        rows.append(
            {
                "t": float(t),
                "re_lambda": float(lam[i].real),
                "im_lambda": float(lam[i].imag),
                "abs_lambda": float(abs(lam[i])),
                "gap": float(gap[i]),
                "residual_D": decomposition_residual(chain, t, n_max, seed=seed),
                "b1_value": float(b[0]),
                "b2_value": float(b[1]),
                "b3_value": float(b[2]),
            }
        )
    return rows
