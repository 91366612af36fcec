"""Built-in models."""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from .chain import build_chain, second_eigenvalue
from .errors import InputError
from .models import AffineModel, Observable, Sampler


def two_state(a=0.3, b=0.4):
    """``[[1-a, a], [b, 1-b]]`` with raw observable ``(1, 0)``."""
    return build_chain(np.array([[1.0 - a, a], [b, 1.0 - b]]), [1.0, 0.0])


def iid(p=(0.5, 0.5), xi=(1.0, -1.0)):
    """Rank-one kernel whose rows all equal ``p``."""
    p = np.asarray(p, dtype=float)
    return build_chain(np.tile(p, (p.size, 1)), xi)


def random_chain(n=8, seed=0, min_gap=0.0, lattice=False, max_tries=1000):
    """Dirichlet(1) rows and a Gaussian observable (small integers if ``lattice``).

    Draws are repeated from the same generator until ``1 - |lambda_2| >= min_gap``.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        Q = rng.dirichlet(np.ones(n), size=n)
        xi = rng.integers(0, 4, size=n).astype(float) if lattice else rng.standard_normal(n)
        if np.ptp(xi) == 0:
            continue
        lam2, _ = second_eigenvalue(Q)
        if 1.0 - abs(lam2) >= min_gap:
            return build_chain(Q, xi)
    raise InputError(f"no chain with gap >= {min_gap} after {max_tries} draws")


def discretized_ar1(a=0.5, s=1.0, grid_size=41, x_max=None):
    """``X' = a X + s N(0,1)`` projected onto a uniform grid on ``[-x_max, x_max]``.

    Cell masses come from the Gaussian CDF at midpoints; the tails fold into
    the edge cells. The observable is the grid coordinate.
    """
    if grid_size < 2:
        raise InputError("grid_size must be >= 2")
    if x_max is None:
        x_max = 4.0 * s / np.sqrt(max(1.0 - a * a, 1e-12))
    x = np.linspace(-x_max, x_max, grid_size)
    mid = 0.5 * (x[1:] + x[:-1])
    edges = np.concatenate(([-np.inf], mid, [np.inf]))
    z = (edges[None, :] - a * x[:, None]) / s
    Q = np.diff(ndtr(z), axis=1)
    Q /= Q.sum(axis=1, keepdims=True)
    return build_chain(Q, x)


def ar1_scalar(a=0.5, s=1.0, x0=0.0):
    """Scalar AR(1) ``X_n = a X_{n-1} + s b_n`` with standard normal ``b_n``; exact mean 0."""
    return AffineModel(
        dim=1,
        A=Sampler("constant", (1, 1), {"value": [[a]]}),
        b=Sampler("gaussian", (1,), {"mean": 0.0, "std": s}),
        observable=Observable("coordinate"),
        x0=(float(x0),),
        center=0.0,
        name="ar1_scalar",
    )


def affine_vector(spec):
    return AffineModel.from_dict(spec)


CATALOG = {
    "two_state": (two_state, "2-state chain [[1-a,a],[b,1-b]], observable (1,0); params a, b"),
    "iid": (iid, "i.i.d. chain with law p and values xi; params p, xi"),
    "random_chain": (random_chain, "Dirichlet random chain; params n, seed, min_gap, lattice"),
    "discretized_ar1": (discretized_ar1, "Gaussian AR(1) on a grid; params a, s, grid_size, x_max"),
    "ar1_scalar": (ar1_scalar, "scalar affine AR(1), standard normal noise; params a, s, x0"),
    "affine_vector": (affine_vector, "affine model from a JSON spec; param spec"),
}

AFFINE_ENTRIES = {"ar1_scalar", "affine_vector"}


def build(name, params=None):
    if name not in CATALOG:
        raise InputError(f"unknown catalog model {name!r}")
    params = dict(params or {})
    try:
        return CATALOG[name][0](**params)
    except TypeError as exc:
        raise InputError(f"bad parameters for {name}: {exc}") from None


def describe():
    return [{"name": k, "description": v[1]} for k, v in CATALOG.items()]
