"""Martingale-difference reduction of ``S_n`` and exact characteristic functions.

With ``h`` the Poisson solution, the increments ``U_k = h(X_k) - Qh(X_{k-1})``
form a stationary martingale difference sequence and
``S_n = T_n + V_n`` where ``T_n = U_1 + ... + U_n`` and
``V_n = Qh(X_0) - Qh(X_n)``. Everything here works with the normalized
increments ``U_k / sigma`` so that their stationary variance is 1.

Expectations under the stationary start are evaluated by propagating the
row vector ``nu M(theta)^m`` where ``M(theta)[x, y] = Q[x, y] exp(i theta U(x, y))``
is the pair kernel of the normalized increment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVariance, IndexOutOfRange
from .poisson import fundamental_solve


@dataclass(frozen=True)
class PairKernel:
    theta: float
    matrix: np.ndarray


@dataclass(frozen=True)
class CharfnDecomposition:
    t: float
    n: int
    total: complex
    A: complex
    B: complex
    C: complex

    @property
    def residual(self):
        return abs(self.total - (self.A + self.B + self.C))


@dataclass(frozen=True)
class MartingaleSplit:
    T_n: float
    V_n: float
    max_violation: float


@dataclass(frozen=True)
class RatioTable:
    n_grid: np.ndarray
    ratios: np.ndarray
    t_grids: list

    def non_explosive(self, factor=1.5):
        return bool(self.ratios[-1] <= factor * self.ratios[:-1].max())


def _require_variance(solution):
    if solution.degenerate or solution.sigma2 <= 0:
        raise DegenerateVariance("asymptotic variance is zero")


def increments(chain, solution):
    """Normalized increment ``(h(y) - Qh(x)) / sigma`` for every pair ``(x, y)``."""
    _require_variance(solution)
    h, qh = solution.xi_check, solution.q_xi_check
    return (h[None, :] - qh[:, None]) / solution.sigma


def pair_kernel(chain, solution, theta):
    U = increments(chain, solution)
    return PairKernel(theta=float(theta), matrix=chain.kernel * np.exp(1j * theta * U))


def psi_hat(solution):
    _require_variance(solution)
    return solution.psi / solution.sigma2


def charfn_T(chain, solution, theta, n):
    """``E_nu[exp(i theta T_n / sigma)] = nu M(theta)^n 1``."""
    M = pair_kernel(chain, solution, theta).matrix
    return complex(chain.stationary @ np.linalg.matrix_power(M, n) @ np.ones(chain.n_states))


def enumerate_charfn_T(chain, solution, theta, n):
    """Same quantity as :func:`charfn_T` by summing over all ``d**(n+1)`` paths."""
    d = chain.n_states
    U = increments(chain, solution)
    Q, nu = chain.kernel, chain.stationary
    paths = np.indices((d,) * (n + 1)).reshape(n + 1, -1)
    weight = nu[paths[0]].copy()
    phase = np.zeros(paths.shape[1])
    for k in range(1, n + 1):
        weight *= Q[paths[k - 1], paths[k]]
        phase += U[paths[k - 1], paths[k]]
    terms = weight * np.exp(1j * theta * phase)
    return complex(np.sum(terms))


def martingale_identity(chain, solution, path):
    """Split ``S_n = T_n + V_n`` along a sampled path of state indices.

    Works on raw (unnormalized) quantities. ``max_violation`` is the largest
    ``|S_k - T_k - V_k|`` over prefixes ``k <= n``.
    """
    states = np.asarray(getattr(path, "states", path))
    if states.size and (states.min() < 0 or states.max() >= chain.n_states or states.ndim != 1):
        raise IndexOutOfRange("path contains invalid state indices")
    if states.size <= 1:
        return MartingaleSplit(0.0, 0.0, 0.0)
    h, qh, xi = solution.xi_check, solution.q_xi_check, chain.observable
    U = h[states[1:]] - qh[states[:-1]]
    T = np.cumsum(U)
    V = qh[states[0]] - qh[states[1:]]
    S = np.cumsum(xi[states[1:]])
    return MartingaleSplit(float(T[-1]), float(V[-1]), float(np.max(np.abs(S - T - V))))


def conditional_drift(chain, solution):
    """``E[U_n | X_{n-1} = x]`` for every state; zero for a martingale difference."""
    h, qh = solution.xi_check, solution.q_xi_check
    return chain.kernel @ h - qh


def lemma41_check(chain, solution, max_lag=20):
    """Largest gap between ``E[W_k | X_{l-1} = x]`` and ``(Q^{k-l} psi_hat)(x)``.

    The left side is rebuilt from the pair structure,
    ``w(x) = sum_y Q[x, y] U(x, y)^2 - 1``, independently of ``psi``.
    """
    U = increments(chain, solution)
    Q = chain.kernel
    w = np.sum(Q * U**2, axis=1) - 1.0
    target = psi_hat(solution)
    worst = 0.0
    for _ in range(max_lag + 1):
        worst = max(worst, float(np.max(np.abs(w - target))))
        w = Q @ w
        target = Q @ target
    return worst


def z_prime(chain, solution):
    """``sum_p Q^p psi_hat`` as the centered solution of ``(I - Q) z = psi_hat``."""
    return fundamental_solve(chain, psi_hat(solution))


def third_moment(chain, solution):
    """Stationary ``E|U_1|^3`` of the normalized increment."""
    U = increments(chain, solution)
    return float(chain.stationary @ np.sum(chain.kernel * np.abs(U) ** 3, axis=1))


def taylor_remainder(x):
    """``u(ix) = exp(ix) - 1 - ix + x^2 / 2`` without cancellation for small ``x``."""
    x = np.asarray(x, dtype=float)
    out = np.exp(1j * x) - 1.0 - 1j * x + 0.5 * x * x
    small = np.abs(x) < 1e-2
    if np.any(small):
        z = 1j * x[small]
        term = z**3 / 6.0
        acc = term.copy()
        for k in range(4, 12):
            term = term * z / k
            acc += term
        out[small] = acc
    return out


def abc_decomposition(chain, solution, t, n):
    """Exact split of ``E[exp(i t T_n / (sigma sqrt n))] - exp(-t^2/2)`` into ``A + B + C``.

    ``A`` is ``(1 - t^2/2n)^n - exp(-t^2/2)``; ``B`` collects third-order
    Taylor remainders of the increments and ``C`` the conditional-variance
    fluctuations ``W_k = U_k^2 - 1``. ``total`` is computed separately by a
    matrix power of the pair kernel.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    theta = t / np.sqrt(n)
    q = 1.0 - t * t / (2.0 * n)
    U = increments(chain, solution)
    Q, nu = chain.kernel, chain.stationary
    M = Q * np.exp(1j * theta * U)
    g = np.sum(Q * taylor_remainder(theta * U), axis=1)
    ph = psi_hat(solution)
    gauss = np.exp(-t * t / 2.0)

    row = nu.astype(complex)
    B = C = 0.0 + 0.0j
    for m in range(n):
        weight = q ** (n - 1 - m)
        B += weight * (row @ g)
        C += weight * (row @ ph)
        row = row @ M
    C *= -(t * t) / (2.0 * n)
    total = charfn_T(chain, solution, theta, n) - gauss
    A = q**n - gauss
    return CharfnDecomposition(t=float(t), n=int(n), total=complex(total), A=complex(A), B=complex(B), C=complex(C))


def _ratio_grid(n, t_per_n, t_min=1e-2):
    return np.geomspace(min(t_min, np.sqrt(n)), np.sqrt(n), t_per_n)


def _max_ratio(charfn_stack, ts, n):
    gauss = np.exp(-ts * ts / 2.0)
    return float(np.max(np.abs(charfn_stack - gauss) * np.sqrt(n) / ts))


def prop41_ratio(chain, solution, n_grid, t_per_n=64):
    """``R(n) = max_{0 < t <= sqrt n} |E exp(i t T_n/(sigma sqrt n)) - exp(-t^2/2)| sqrt(n) / t``.

    Only positive ``t`` are scanned: the modulus is even in ``t``.
    """
    U = increments(chain, solution)
    Q, nu = chain.kernel, chain.stationary
    ones = np.ones(chain.n_states)
    ratios, grids = [], []
    for n in n_grid:
        ts = _ratio_grid(n, t_per_n)
        Ms = Q[None] * np.exp(1j * (ts / np.sqrt(n))[:, None, None] * U[None])
        vals = nu @ np.linalg.matrix_power(Ms, int(n)) @ ones
        ratios.append(_max_ratio(vals, ts, n))
        grids.append(ts)
    return RatioTable(np.asarray(n_grid), np.asarray(ratios), grids)


def martingale_rows(chain, solution, n_grid, t_grid):
    """Rows ``n, t, re_total, im_total, re_A, re_B, re_C, ratio`` for the CSV report."""
    rows = []
    for n in n_grid:
        for t in t_grid:
            dec = abc_decomposition(chain, solution, t, n)
            ratio = abs(dec.total) * np.sqrt(n) / abs(t) if t != 0 else 0.0
            rows.append(
                {
                    "n": int(n),
                    "t": float(t),
                    "re_total": dec.total.real,
                    "im_total": dec.total.imag,
                    "re_A": dec.A.real,
                    "re_B": dec.B.real,
                    "re_C": dec.C.real,
                    "ratio": float(ratio),
                }
            )
    return rows
