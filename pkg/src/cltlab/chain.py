"""Finite-state Markov chains: construction, stationary law, ergodicity constants.

A :class:`FiniteChain` bundles a row-stochastic kernel with its stationary
law, a centered observable and an optional positive weight defining the
weighted sup norm ``||f||_W = max |f(x)| / W(x)``.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DimensionMismatch,
    InputError,
    NegativeEntry,
    NonStochastic,
    NoSpectralGap,
    PeriodicityWarning,
    ReducibleChain,
    WeightBelowOne,
)

ROW_SUM_TOL = 1e-9
NEGATIVE_TOL = 1e-15
UNIT_EIGEN_TOL = 1e-9
LATTICE_TOL = 1e-9
LATTICE_FIT_TOL = 1e-12
SUPPORT_TOL = 1e-14
DEFECT_INFLATION = 1e-6
CERT_ATOL = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Lattice:
    """Observable values of the form ``offset + step * k`` with integer ``k >= 0``."""

    offset: float
    step: float
    k: np.ndarray

    @property
    def span(self):
        return int(self.k.max()) if self.k.size else 0


@dataclass(frozen=True)
class FiniteChain:
    """Immutable finite Markov chain with a centered observable.

    Attributes
    ----------
    kernel : (d, d) ndarray
        Row-stochastic transition matrix ``Q``.
    stationary : (d,) ndarray
        Invariant probability ``nu`` (strictly positive).
    observable : (d,) ndarray
        ``xi`` centered so that ``nu(xi) = 0``.
    weight : (d,) ndarray
        Positive weight ``W`` of the sup norm.
    lattice : Lattice or None
        Detected arithmetic structure of ``observable``.
    support : (d,) ndarray of int
        Indices of the retained states in the kernel passed to :func:`build_chain`.
    periodic : bool
        True when ``Q`` has eigenvalues other than 1 on the unit circle.
    """

    kernel: np.ndarray
    stationary: np.ndarray
    observable: np.ndarray
    weight: np.ndarray
    lattice: Optional[Lattice] = None
    support: np.ndarray = field(default=None)
    periodic: bool = False
    raw_mean: float = 0.0

    @property
    def n_states(self):
        return self.kernel.shape[0]

    def to_dict(self):
        return {
            "kernel": self.kernel.tolist(),
            "stationary": self.stationary.tolist(),
            "observable": self.observable.tolist(),
            "weight": self.weight.tolist(),
            "lattice": None
            if self.lattice is None
            else {
                "offset": self.lattice.offset,
                "step": self.lattice.step,
                "k": self.lattice.k.tolist(),
            },
        }


@dataclass(frozen=True)
class ErgodicityCertificate:
    """Geometric ergodicity constants in the weighted sup norm.

    For ``1 <= n <= n_checked`` and every ``f``::

        ||Q^n f - nu(f) 1||_W <= C * kappa0**n * ||f||_W + atol * ||f||_W

    ``atol`` absorbs floating point noise once ``kappa0**n`` underflows it.
    """

    kappa0: float
    C: float
    n_checked: int
    atol: float = CERT_ATOL
    defective: bool = False

    def bound(self, n, f_norm=1.0):
        return (self.C * self.kappa0**n + self.atol) * f_norm


def weighted_norm(f, W):
    """Return ``max_x |f(x)| / W(x)``."""
    f = np.asarray(f)
    W = np.asarray(W, dtype=float)
    if f.shape != W.shape:
        raise DimensionMismatch(f"f has shape {f.shape}, W has shape {W.shape}")
    if np.any(W <= 0):
        raise InputError("weight must be positive")
    if f.size == 0:
        return 0.0
    return float(np.max(np.abs(f) / W))


def operator_norm_w(A, W):
    """Operator norm of the matrix ``A`` acting on ``(C^d, ||.||_W)``."""
    W = np.asarray(W, dtype=float)
    return float(np.max((np.abs(A) @ W) / W))


def derive_weights(V):
    """Split ``V >= 1`` into ``W = V**(1/3)`` and ``U = V**(2/3)``."""
    V = np.asarray(V, dtype=float)
    if np.any(V < 1):
        raise WeightBelowOne("every entry of V must be >= 1")
    W = np.cbrt(V)
    U = V / W
    return W, U


def power_iteration_stationary(kernel, tol=1e-15, max_squarings=64):
    """Stationary vector by repeated squaring of the lazy kernel ``(Q + I) / 2``.

    Kept as an independent cross-check of :func:`stationary_distribution`.
    """
    Q = np.asarray(kernel, dtype=float)
    d = Q.shape[0]
    P = 0.5 * (Q + np.eye(d))
    for _ in range(max_squarings):
        P2 = P @ P
        P2 /= P2.sum(axis=1, keepdims=True)
        done = np.max(np.abs(P2 - P)) <= tol
        P = P2
        if done:
            break
    nu = np.full(d, 1.0 / d) @ P
    return nu / nu.sum()


def _unit_eigenvalues(Q):
    w = np.linalg.eigvals(Q)
    near_one = np.abs(w - 1.0) <= UNIT_EIGEN_TOL
    on_circle = (np.abs(w) >= 1.0 - UNIT_EIGEN_TOL) & ~near_one
    return int(near_one.sum()), bool(on_circle.any())


def stationary_distribution(kernel):
    """Invariant probability vector of a row-stochastic kernel.

    Solves ``(Q^T - I) nu = 0`` with the normalization row ``sum(nu) = 1``
    appended. Emits :class:`PeriodicityWarning` for periodic kernels (the
    answer is still the unique invariant law).

    Raises
    ------
    ReducibleChain
        If 1 is not a simple eigenvalue of ``Q``.
    """
    Q = np.asarray(kernel, dtype=float)
    d = Q.shape[0]
    n_unit, periodic = _unit_eigenvalues(Q)
    if n_unit >= 2:
        raise ReducibleChain(f"eigenvalue 1 has multiplicity {n_unit}")
    if periodic:
        warnings.warn("kernel is periodic", PeriodicityWarning, stacklevel=2)
    A = np.vstack([Q.T - np.eye(d), np.ones((1, d))])
    b = np.zeros(d + 1)
    b[-1] = 1.0
    nu, *_ = np.linalg.lstsq(A, b, rcond=None)
    nu = np.clip(nu, 0.0, None)
    nu /= nu.sum()
    check = power_iteration_stationary(Q)
    if np.max(np.abs(check - nu)) > 1e-8:
        warnings.warn(
            "linear solve and power iteration disagree on the stationary law",
            RuntimeWarning,
            stacklevel=2,
        )
    return nu


def detect_lattice(values, tol=LATTICE_TOL, max_denominator=1000):
    """Find ``offset`` and ``step`` such that ``values = offset + step * k``.

    The step is searched among ``g / q`` for ``q <= max_denominator`` where
    ``g`` is the smallest gap between distinct values. The fitted
    representation is re-checked at ``LATTICE_FIT_TOL``; ``None`` is returned
    when no representation passes.
    """
    x = np.asarray(values, dtype=float)
    lo = float(x.min())
    diffs = x - lo
    if np.all(diffs <= tol):
        return Lattice(offset=lo, step=1.0, k=_frozen(np.zeros(x.size, dtype=np.int64), np.int64))
    distinct = np.unique(diffs)
    gaps = np.diff(distinct)
    gaps = gaps[gaps > tol]
    g = float(gaps.min()) if gaps.size else float(distinct[-1])
    for q in range(1, max_denominator + 1):
        step = g / q
        k = np.rint(diffs / step)
        if np.all(np.abs(diffs - k * step) <= tol):
            break
    else:
        return None
    design = np.column_stack([np.ones(x.size), k])
    (offset, step), *_ = np.linalg.lstsq(design, x, rcond=None)
    if step <= 0 or np.max(np.abs(x - (offset + step * k))) > LATTICE_FIT_TOL:
        return None
    return Lattice(offset=float(offset), step=float(step), k=_frozen(k.astype(np.int64), np.int64))


def build_chain(kernel, raw_observable, weight=None):
    """Validate a kernel and observable and return a :class:`FiniteChain`.

    States with zero stationary mass are pruned; the observable is centered
    under the stationary law and a lattice structure is detected.
    """
    Q = np.array(kernel, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise DimensionMismatch(f"kernel must be square, got shape {Q.shape}")
    d = Q.shape[0]
    if d < 2:
        raise DimensionMismatch("a chain needs at least 2 states")
    if not np.all(np.isfinite(Q)):
        raise InputError("kernel has non-finite entries")
    if np.any(Q < -NEGATIVE_TOL):
        raise NegativeEntry(f"kernel has entries below {-NEGATIVE_TOL}")
    Q = np.clip(Q, 0.0, None)
    rows = Q.sum(axis=1)
    bad = np.abs(rows - 1.0) > ROW_SUM_TOL
    if np.any(bad):
        raise NonStochastic(f"rows {np.flatnonzero(bad).tolist()} do not sum to 1")
    Q /= rows[:, None]

    xi = np.array(raw_observable, dtype=float).ravel()
    if xi.size != d:
        raise DimensionMismatch(f"observable has {xi.size} entries, kernel has {d} states")
    W = np.ones(d) if weight is None else np.array(weight, dtype=float).ravel()
    if W.size != d:
        raise DimensionMismatch(f"weight has {W.size} entries, kernel has {d} states")
    if np.any(W <= 0):
        raise InputError("weight must be positive")

    nu = stationary_distribution(Q)
    periodic = _unit_eigenvalues(Q)[1]

    support = np.flatnonzero(nu > SUPPORT_TOL)
    if support.size < d:
        Q = Q[np.ix_(support, support)]
        Q /= Q.sum(axis=1)[:, None]
        xi, W = xi[support], W[support]
        nu = stationary_distribution(Q) if support.size > 1 else np.ones(1)

    mean = float(nu @ xi)
    centered = xi - mean
    return FiniteChain(
        kernel=_frozen(Q),
        stationary=_frozen(nu),
        observable=_frozen(centered),
        weight=_frozen(W),
        lattice=detect_lattice(centered),
        support=_frozen(support, np.int64),
        periodic=periodic,
        raw_mean=mean,
    )


def with_observable(chain, raw_observable, weight=None):
    """Same kernel, different observable (and optionally weight)."""
    W = chain.weight if weight is None else weight
    return build_chain(chain.kernel, raw_observable, W)


def second_eigenvalue(kernel):
    """Eigenvalue of largest modulus after removing the one closest to 1."""
    w = np.linalg.eigvals(np.asarray(kernel))
    if w.size == 1:
        return 0.0 + 0.0j, w
    i_one = int(np.argmin(np.abs(w - 1.0)))
    rest = np.delete(w, i_one)
    return complex(rest[np.argmax(np.abs(rest))]), rest


def ergodicity_constants(chain, n_max=200):
    """Constants ``(kappa0, C)`` of geometric ergodicity in the ``W`` norm.

    ``kappa0`` is the modulus of the second eigenvalue of ``Q`` (inflated by
    ``1e-6`` when that eigenvalue is defective). ``C`` is the largest ratio
    ``||Q^n - 1 nu||_W / kappa0**n`` over ``n <= n_max``, using the operator
    norm so the bound covers every ``f`` and not only basis vectors.
    """
    Q = chain.kernel
    d = chain.n_states
    lam2, rest = second_eigenvalue(Q)
    kappa0 = abs(lam2)
    if kappa0 >= 1.0 - UNIT_EIGEN_TOL:
        raise NoSpectralGap(f"second eigenvalue has modulus {kappa0:.12g}")
    defective = False
    for mu in rest[np.abs(np.abs(rest) - kappa0) <= 1e-6]:
        alg = int(np.sum(np.abs(rest - mu) <= 1e-6))
        geo = d - np.linalg.matrix_rank(Q - mu * np.eye(d), tol=1e-8)
        if alg > geo:
            defective = True
    if defective:
        kappa0 += DEFECT_INFLATION

    proj = np.outer(np.ones(d), chain.stationary)
    P = np.eye(d)
    C = 0.0
    for n in range(1, n_max + 1):
        P = P @ Q
        excess = operator_norm_w(P - proj, chain.weight) - CERT_ATOL
        if excess <= 0:
            continue
        scale = kappa0**n
        if scale == 0.0:
            C = float("inf")
            break
        C = max(C, excess / scale)
    return ErgodicityCertificate(kappa0=float(kappa0), C=float(C), n_checked=n_max, defective=defective)


def load_chain_json(source):
    """Build a chain from ``{"kernel": [[...]], "observable": [...], "weight": [...]?}``.

    ``source`` may be a mapping, a JSON string or a path to a JSON file.
    """
    if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        with open(source) as fh:
            doc = json.load(fh)
    elif isinstance(source, str):
        doc = json.loads(source)
    else:
        doc = dict(source)
    try:
        return build_chain(doc["kernel"], doc["observable"], doc.get("weight"))
    except KeyError as exc:
        raise InputError(f"chain document is missing {exc}") from None
