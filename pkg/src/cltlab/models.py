"""Monte Carlo engine for finite chains and affine iterated random maps.

Seeding contract
----------------
Path ``i`` of a run with master seed ``s`` draws every random number from
its own ``numpy.random.Generator(PCG64(mix_seed(s, i)))`` where::

    splitmix64(x) = finalizer of (x + 0x9E3779B97F4A7C15) mod 2**64
    mix_seed(s, i) = splitmix64(splitmix64(s mod 2**64) XOR (i mod 2**64))

so a path never depends on which worker produced it or in which order.
Within a path the draw order is fixed: the initial state first, then the
per-step variables for all steps at once (uniforms for finite chains; all
``A`` matrices, then all ``b`` vectors for affine models).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .chain import build_chain
from .errors import BadInitialLaw, InputError, SamplerFailure, TooFewPaths

MASK64 = (1 << 64) - 1
PILOT_INDEX = MASK64
STAR_INDEX = MASK64 - 1
DEFAULT_CHUNK = 256


def splitmix64(x):
    z = (int(x) + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix_seed(master_seed, path_index):
    return splitmix64(splitmix64(int(master_seed) & MASK64) ^ (int(path_index) & MASK64))


def path_rng(master_seed, path_index):
    return np.random.Generator(np.random.PCG64(mix_seed(master_seed, path_index)))


@dataclass(frozen=True)
class PathSample:
    """One simulated trajectory.

    ``states`` holds ``X_0 .. X_n``; ``partial_sums[k - 1] = S_k`` for
    ``k = 1 .. n`` (empty when ``n = 0``).
    """

    seed: int
    path_index: int
    states: np.ndarray
    partial_sums: np.ndarray
    n: int


def _chunks(indices, size):
    for start in range(0, len(indices), size):
        yield start, indices[start : start + size]


def _run_chunked(fn, indices, workers, chunk):
    """Apply ``fn`` to fixed-size chunks of ``indices`` and concatenate in order."""
    indices = list(indices)
    parts = list(_chunks(indices, chunk))
    if workers and workers > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda p: fn(p[1]), parts))
    else:
        results = [fn(p[1]) for p in parts]
    return np.concatenate(results) if results else np.empty(0)


# ---------------------------------------------------------------- finite chains


def _check_law(chain, initial_law):
    if initial_law is None:
        return chain.stationary
    mu = np.asarray(initial_law, dtype=float)
    if mu.shape != (chain.n_states,) or np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-9:
        raise BadInitialLaw("initial law must be a probability vector over the chain states")
    return mu / mu.sum()


def _cumulative(p):
    c = np.cumsum(p, axis=-1)
    c[..., -1] = 1.0
    return c


def _finite_batch(chain, n, master_seed, indices, mu):
    cum_q = _cumulative(chain.kernel)
    cum_mu = _cumulative(mu)
    P = len(indices)
    U = np.empty((P, n + 1))
    for row, i in enumerate(indices):
        U[row] = path_rng(master_seed, i).random(n + 1)
    states = np.empty((P, n + 1), dtype=np.int64)
    states[:, 0] = np.sum(U[:, :1] >= cum_mu[None, :], axis=1)
    for k in range(1, n + 1):
        states[:, k] = np.sum(U[:, k : k + 1] >= cum_q[states[:, k - 1]], axis=1)
    return states


def simulate_finite(chain, n, master_seed, path_index, initial_law=None):
    """Simulate ``n`` steps of ``chain`` by inverse-CDF sampling."""
    mu = _check_law(chain, initial_law)
    states = _finite_batch(chain, n, master_seed, [path_index], mu)[0]
    sums = np.cumsum(chain.observable[states[1:]])
    return PathSample(
        seed=mix_seed(master_seed, path_index),
        path_index=int(path_index),
        states=states,
        partial_sums=sums,
        n=int(n),
    )


def finite_sums(chain, n, master_seed, path_indices, initial_law=None, workers=1, chunk=DEFAULT_CHUNK):
    """``S_n`` for each requested path, identical to :func:`simulate_finite` path by path."""
    mu = _check_law(chain, initial_law)
    xi = chain.observable

    def run(idx):
        states = _finite_batch(chain, n, master_seed, idx, mu)
        return np.cumsum(xi[states[:, 1:]], axis=1)[:, -1]

    return _run_chunked(run, path_indices, workers, chunk)


# ---------------------------------------------------------------- samplers


@dataclass(frozen=True)
class Sampler:
    """Law of a random array of fixed ``shape``.

    Kinds: ``constant`` (``value``), ``uniform`` (``low``, ``high``,
    entrywise), ``gaussian`` (``mean``, ``std``, entrywise independent),
    ``discrete`` (``values`` list of arrays, ``probs``).
    """

    kind: str
    shape: tuple
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        kinds = {"constant", "uniform", "gaussian", "discrete"}
        if self.kind not in kinds:
            raise SamplerFailure(f"unknown sampler kind {self.kind!r}")
        try:
            self._probe()
        except (KeyError, ValueError, TypeError) as exc:
            raise SamplerFailure(f"bad {self.kind} sampler parameters: {exc}") from None

    def _probe(self):
        p = self.params
        if self.kind == "constant":
            np.broadcast_to(np.asarray(p["value"], dtype=float), self.shape)
        elif self.kind == "uniform":
            lo = np.broadcast_to(np.asarray(p["low"], dtype=float), self.shape)
            hi = np.broadcast_to(np.asarray(p["high"], dtype=float), self.shape)
            if np.any(hi < lo):
                raise ValueError("high < low")
        elif self.kind == "gaussian":
            np.broadcast_to(np.asarray(p.get("mean", 0.0), dtype=float), self.shape)
            if np.any(np.asarray(p.get("std", 1.0), dtype=float) < 0):
                raise ValueError("negative std")
        else:
            vals = [np.broadcast_to(np.asarray(v, dtype=float), self.shape) for v in p["values"]]
            probs = np.asarray(p["probs"], dtype=float)
            if len(vals) != probs.size or np.any(probs < 0) or abs(probs.sum() - 1) > 1e-9:
                raise ValueError("probs must be a probability vector matching values")

    def sample(self, rng, size):
        p = self.params
        full = (size,) + tuple(self.shape)
        if self.kind == "constant":
            out = np.broadcast_to(np.asarray(p["value"], dtype=float), full).copy()
        elif self.kind == "uniform":
            out = rng.uniform(p["low"], p["high"], size=full) if size else np.empty(full)
        elif self.kind == "gaussian":
            out = rng.normal(p.get("mean", 0.0), p.get("std", 1.0), size=full)
        else:
            vals = np.stack([np.broadcast_to(np.asarray(v, dtype=float), self.shape) for v in p["values"]])
            probs = np.asarray(p["probs"], dtype=float)
            out = vals[rng.choice(len(probs), size=size, p=probs / probs.sum())]
        if not np.all(np.isfinite(out)):
            raise SamplerFailure("sampler produced non-finite values")
        return out

    def support_bound(self):
        """Largest possible Euclidean norm of a draw (inf for unbounded laws)."""
        p = self.params
        if self.kind == "constant":
            return float(np.linalg.norm(np.asarray(p["value"], dtype=float) * np.ones(self.shape)))
        if self.kind == "uniform":
            lo = np.abs(np.broadcast_to(np.asarray(p["low"], dtype=float), self.shape))
            hi = np.abs(np.broadcast_to(np.asarray(p["high"], dtype=float), self.shape))
            return float(np.linalg.norm(np.maximum(lo, hi)))
        if self.kind == "discrete":
            return max(float(np.linalg.norm(np.asarray(v, dtype=float) * np.ones(self.shape))) for v in p["values"])
        return math.inf

    @classmethod
    def from_dict(cls, doc, shape):
        doc = dict(doc)
        kind = doc.pop("kind", doc.pop("type", None))
        if kind is None:
            raise SamplerFailure("sampler needs a 'kind'")
        return cls(kind=kind, shape=tuple(shape), params=doc)


# ---------------------------------------------------------------- observables


@dataclass(frozen=True)
class Observable:
    """Lipschitz observable on ``R^d``.

    Kinds: ``coordinate`` (``x[index]``), ``norm`` (``||x||``),
    ``centered-norm`` (``||x - center||``), ``tabulated`` (piecewise-linear
    in ``x[index]`` through ``knots``/``values``, constant beyond the ends).
    """

    kind: str = "coordinate"
    index: int = 0
    center: Optional[tuple] = None
    knots: Optional[tuple] = None
    values: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in {"coordinate", "norm", "centered-norm", "tabulated"}:
            raise InputError(f"unknown observable {self.kind!r}")
        if self.kind == "tabulated":
            k = np.asarray(self.knots, dtype=float)
            if k.size < 2 or k.size != len(self.values) or np.any(np.diff(k) <= 0):
                raise InputError("tabulated observable needs increasing knots matching values")

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        if self.kind == "coordinate":
            return X[..., self.index]
        if self.kind == "norm":
            return np.linalg.norm(X, axis=-1)
        if self.kind == "centered-norm":
            c = np.zeros(X.shape[-1]) if self.center is None else np.asarray(self.center, dtype=float)
            return np.linalg.norm(X - c, axis=-1)
        return np.interp(X[..., self.index], self.knots, self.values)

    @property
    def lipschitz(self):
        if self.kind != "tabulated":
            return 1.0
        return float(np.max(np.abs(np.diff(self.values) / np.diff(self.knots))))

    @classmethod
    def parse(cls, spec):
        if isinstance(spec, Observable):
            return spec
        if isinstance(spec, str):
            kind, _, arg = spec.partition(":")
            return cls(kind=kind, index=int(arg) if arg else 0)
        spec = dict(spec)
        for key in ("center", "knots", "values"):
            if spec.get(key) is not None:
                spec[key] = tuple(spec[key])
        return cls(**spec)


# ---------------------------------------------------------------- affine models


@dataclass(frozen=True)
class AffineModel:
    """``X_n = A_n X_{n-1} + b_n`` with i.i.d. ``(A_n, b_n)``.

    ``center`` is the stationary mean of the observable when known exactly;
    otherwise it is estimated by :func:`estimate_centering`.
    """

    dim: int
    A: Sampler
    b: Sampler
    observable: Observable = field(default_factory=Observable)
    x0: tuple = None
    initial: Optional[Sampler] = None
    center: Optional[float] = None
    name: str = "affine"

    def __post_init__(self):
        if self.A.shape != (self.dim, self.dim) or self.b.shape != (self.dim,):
            raise InputError("sampler shapes do not match the model dimension")
        if self.x0 is None:
            object.__setattr__(self, "x0", (0.0,) * self.dim)
        if self.initial is None:
            object.__setattr__(self, "initial", Sampler("constant", (self.dim,), {"value": list(self.x0)}))

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        if doc.get("type", "affine") != "affine":
            raise InputError(f"unsupported model type {doc.get('type')!r}")
        try:
            d = int(doc["dim"])
            A = Sampler.from_dict(doc["A"], (d, d))
            b = Sampler.from_dict(doc["b"], (d,))
        except KeyError as exc:
            raise InputError(f"affine model is missing {exc}") from None
        x0 = tuple(float(v) for v in doc["x0"]) if doc.get("x0") is not None else None
        init = Sampler.from_dict(doc["initial"], (d,)) if doc.get("initial") else None
        return cls(
            dim=d,
            A=A,
            b=b,
            observable=Observable.parse(doc.get("observable", "coordinate")),
            x0=x0,
            initial=init,
            center=doc.get("center"),
            name=doc.get("name", "affine"),
        )


def _affine_draws(model, rng, n):
    x = model.initial.sample(rng, 1)[0]
    A = model.A.sample(rng, n)
    b = model.b.sample(rng, n)
    return x, A, b


def _affine_step(A, X, b):
    # fixed elementwise summation order keeps batch and single-path runs bit-identical
    out = b.copy()
    for j in range(X.shape[1]):
        out += A[:, :, j] * X[:, j : j + 1]
    return out


def _affine_batch(model, n, master_seed, indices, keep_states=False):
    draws = [_affine_draws(model, path_rng(master_seed, i), n) for i in indices]
    X = np.stack([d[0] for d in draws])
    A = np.stack([d[1] for d in draws])
    b = np.stack([d[2] for d in draws])
    obs = np.empty((len(indices), n))
    states = np.empty((len(indices), n + 1, model.dim)) if keep_states else None
    if keep_states:
        states[:, 0] = X
    for k in range(n):
        X = _affine_step(A[:, k], X, b[:, k])
        obs[:, k] = model.observable(X)
        if keep_states:
            states[:, k + 1] = X
    return obs, states


def simulate_affine(model, n, master_seed, path_index, center=None):
    """Simulate one path; partial sums use ``observable - center``."""
    c = _center_value(model, center)
    obs, states = _affine_batch(model, n, master_seed, [path_index], keep_states=True)
    return PathSample(
        seed=mix_seed(master_seed, path_index),
        path_index=int(path_index),
        states=states[0],
        partial_sums=np.cumsum(obs[0] - c),
        n=int(n),
    )


def _center_value(model, center):
    if center is not None:
        return float(center)
    if model.center is not None:
        return float(model.center)
    raise InputError("centering constant unknown: pass center= or use estimate_centering")


def affine_sums(model, n, master_seed, path_indices, center=None, workers=1, chunk=DEFAULT_CHUNK):
    """``S_n`` for each requested path of an affine model."""
    c = _center_value(model, center)

    def run(idx):
        obs, _ = _affine_batch(model, n, master_seed, idx)
        return np.cumsum(obs - c, axis=1)[:, -1]

    return _run_chunked(run, path_indices, workers, chunk)


@dataclass(frozen=True)
class Centering:
    value: float
    stderr: float
    steps: int
    burn_in: int


def estimate_centering(model, steps=10**6, burn_in=10**4, master_seed=0, paths=100):
    """Pilot estimate of the stationary mean of the observable.

    Runs ``paths`` independent pilot paths (path indices ``PILOT_INDEX - j``),
    discards ``burn_in`` steps of each and averages the remaining
    ``steps // paths`` values; the standard error uses per-path means as
    batch means.
    """
    per_path = max(1, steps // paths)
    idx = [PILOT_INDEX - j for j in range(paths)]
    obs, _ = _affine_batch(model, burn_in + per_path, master_seed, idx)
    means = obs[:, burn_in:].mean(axis=1)
    return Centering(
        value=float(means.mean()),
        stderr=float(means.std(ddof=1) / np.sqrt(paths)) if paths > 1 else math.inf,
        steps=per_path * paths,
        burn_in=burn_in,
    )


def spectral_norms(A, rng=None, tol=1e-10, max_iter=1000):
    """Operator 2-norms of a stack of matrices by power iteration on ``A^T A``."""
    A = np.asarray(A, dtype=float)
    S, d, _ = A.shape
    if d == 1:
        return np.abs(A[:, 0, 0])
    rng = np.random.default_rng(0) if rng is None else rng
    G = np.einsum("sji,sjk->sik", A, A)
    x = rng.standard_normal((S, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    est = np.zeros(S)
    for _ in range(max_iter):
        y = np.einsum("sij,sj->si", G, x)
        new = np.linalg.norm(y, axis=1)
        zero = new == 0
        x = np.where(zero[:, None], x, y / np.where(zero, 1.0, new)[:, None])
        done = np.abs(new - est) <= tol * np.maximum(new, 1e-300)
        est = new
        if np.all(done | zero):
            break
    return np.sqrt(est)


@dataclass(frozen=True)
class ConditionStar:
    I1: float
    I1_stderr: float
    I2: float
    I2_stderr: float
    passed: bool
    n0: int
    samples: int


@dataclass(frozen=True)
class GMapSample:
    """Lipschitz coefficient ``c``, displacement ``d0 = ||g x0 - x0||`` and ``gamma = 1 + c + d0``."""

    c: np.ndarray
    d0: np.ndarray
    gamma: np.ndarray


def sample_gmaps(model, rng, n0, samples):
    """Draw ``samples`` maps from the ``n0``-fold convolution of the map law."""
    A, b = _compose(model, rng, n0, samples)
    x0 = np.asarray(model.x0, dtype=float)
    c = spectral_norms(A, rng)
    d0 = np.linalg.norm(A @ x0 + b - x0, axis=1)
    return GMapSample(c=c, d0=d0, gamma=1.0 + c + d0)


def _compose(model, rng, n0, samples):
    A = np.broadcast_to(np.eye(model.dim), (samples, model.dim, model.dim)).copy()
    b = np.zeros((samples, model.dim))
    for _ in range(n0):
        Ak = model.A.sample(rng, samples)
        bk = model.b.sample(rng, samples)
        A = Ak @ A
        b = np.einsum("sij,sj->si", Ak, b) + bk
    return A, b


def _mean_se(x):
    m = float(np.mean(x))
    se = float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    return m, se


def condition_star_estimate(model, n0=1, samples=10000, master_seed=0):
    """Monte Carlo check of the moment/contraction condition for affine maps.

    ``I1 = E[Gamma^3 (1 + c^{1/2})]`` over single maps and
    ``I2 = E[c^{1/2} max(c, 1)^3]`` over ``n0``-fold compositions, where
    ``c`` is the operator norm of the linear part and
    ``Gamma = 1 + c + ||g x0 - x0||``. ``passed`` means ``I2 + 2 se < 1``.
    """
    if n0 < 1 or samples < 2:
        raise InputError("need n0 >= 1 and samples >= 2")
    rng = path_rng(master_seed, STAR_INDEX)
    g1 = sample_gmaps(model, rng, 1, samples)
    I1, se1 = _mean_se(g1.gamma**3 * (1.0 + np.sqrt(g1.c)))
    gn = sample_gmaps(model, rng, n0, samples)
    I2, se2 = _mean_se(np.sqrt(gn.c) * np.maximum(gn.c, 1.0) ** 3)
    return ConditionStar(I1, se1, I2, se2, bool(I2 + 2.0 * se2 < 1.0), int(n0), int(samples))


# ---------------------------------------------------------------- estimation


@dataclass(frozen=True)
class VarianceEstimate:
    sigma2_hat: float
    stderr: float
    paths: int


def mc_variance_estimate(sums, n):
    """Sample variance of ``S_n / sqrt(n)`` across paths with its standard error.

    The standard error uses the asymptotic variance ``(mu4 - s^4) / m`` of
    the sample variance, ``mu4`` being the central fourth moment.
    """
    y = np.asarray(sums, dtype=float).ravel() / math.sqrt(n)
    m = y.size
    if m < 100:
        raise TooFewPaths(f"need at least 100 paths, got {m}")
    dev = y - math.fsum(y) / m
    s2 = math.fsum(dev * dev) / (m - 1)
    mu4 = math.fsum(dev**4) / m
    return VarianceEstimate(float(s2), float(math.sqrt(max(mu4 - s2 * s2, 0.0) / m)), m)


def induced_iid_chain(model):
    """Finite chain of an affine model with ``A = 0`` and a discrete scalar ``b``.

    Then ``X_n = b_n`` for ``n >= 1``, an i.i.d. sequence whose law is the law of ``b``.
    """
    if model.dim != 1 or model.b.kind != "discrete":
        raise InputError("needs a scalar model with a discrete b sampler")
    if model.A.kind != "constant" or np.any(np.asarray(model.A.params["value"], dtype=float) != 0):
        raise InputError("needs A identically zero")
    vals = np.array([float(np.ravel(v)[0]) for v in model.b.params["values"]])
    probs = np.asarray(model.b.params["probs"], dtype=float)
    obs = model.observable(vals[:, None])
    kernel = np.tile(probs / probs.sum(), (vals.size, 1))
    return build_chain(kernel, obs)


def path_indices(count: int, start: int = 0) -> Sequence[int]:
    return range(start, start + count)
