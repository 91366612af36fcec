"""Command line front end.

``cltlab <command> --config FILE [--seed N] [--out DIR] [--format csv|json] [--svg] [--workers K]``

Exit status is 0 on success, 1 when the configuration is invalid and 2 for
any numerical failure; failures print a JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import catalog
from .chain import build_chain, ergodicity_constants
from .errors import CltLabError, ConfigInvalid
from .martingale import lemma41_check, martingale_rows, prop41_ratio
from .models import (
    AffineModel,
    affine_sums,
    condition_star_estimate,
    estimate_centering,
    mc_variance_estimate,
)
from .poisson import poisson_report, solve_poisson, variance_consistency
from .rates import (
    DP_BUDGET,
    affine_rate_report,
    berry_esseen_integral,
    chain_rate_report,
    cor41_ratio,
)
from .report import emit_report
from .spectral import (
    default_alpha,
    default_t_max,
    doeblin_ess_bound,
    gaussian_domination,
    h3_check,
    h4_uniform_bound,
    lambda_expansion,
    spectral_scan,
)

COMMANDS = ("spectral", "poisson", "martingale", "charfn", "rate", "integral", "doeblin", "condition-star", "models")


# ---------------------------------------------------------------- config handling


def load_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigInvalid(f"cannot read config: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigInvalid("config must be a JSON object")
    return doc


def _n_grid(params, default):
    grid = params.get("n_grid", default)
    if not isinstance(grid, list) or not grid:
        raise ConfigInvalid("n_grid must be a non-empty list")
    if any(not isinstance(n, int) or isinstance(n, bool) or n < 1 for n in grid):
        raise ConfigInvalid("n_grid entries must be positive integers")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigInvalid("n_grid must be strictly increasing")
    return grid


def _positive(params, key, default, cast=float):
    v = params.get(key, default)
    try:
        v = cast(v)
    except (TypeError, ValueError):
        raise ConfigInvalid(f"{key} must be a number") from None
    if not v > 0:
        raise ConfigInvalid(f"{key} must be > 0")
    return v


def _validate_tolerances(params):
    for key, v in params.items():
        if key.endswith("tol") or key.startswith("tol"):
            if not isinstance(v, (int, float)) or not v > 0:
                raise ConfigInvalid(f"tolerance {key} must be > 0")


def build_model(spec):
    """Chain or affine model from the ``model`` section of a config."""
    if spec is None:
        spec = {"catalog": "two_state"}
    if not isinstance(spec, dict):
        raise ConfigInvalid("model must be an object")
    try:
        if "catalog" in spec:
            return catalog.build(spec["catalog"], spec.get("params"))
        if spec.get("type") == "affine":
            return AffineModel.from_dict(spec)
        if "kernel" in spec:
            return build_chain(spec["kernel"], spec.get("observable"), spec.get("weight"))
    except (KeyError, TypeError) as exc:
        raise ConfigInvalid(f"bad model specification: {exc}") from None
    raise ConfigInvalid("model needs 'catalog', 'kernel' or type 'affine'")


def _need_chain(model):
    if isinstance(model, AffineModel):
        raise ConfigInvalid("this command needs a finite chain model")
    return model


def _need_affine(model):
    if not isinstance(model, AffineModel):
        raise ConfigInvalid("this command needs an affine model")
    return model


def _need_seed(ctx):
    if ctx["seed"] is None:
        raise ConfigInvalid("master_seed is required for Monte Carlo commands")
    return ctx["seed"]


# ---------------------------------------------------------------- commands


def cmd_spectral(model, params, ctx):
    chain = _need_chain(model)
    sol = solve_poisson(chain)
    t_max = _positive(params, "t_max", min(default_t_max(sol), 1.0))
    points = _positive(params, "points", 21, int)
    ts = np.linspace(-t_max, t_max, points)
    rows = spectral_scan(chain, ts, n_max=_positive(params, "n_max", 30, int), seed=ctx["seed"] or 0)
    pos = ts[ts > 0]
    exp = lambda_expansion(chain, sol)
    h4 = h4_uniform_bound(chain, pos)
    alpha = default_alpha(chain, sol)
    summary = {
        "sigma2": sol.sigma2,
        "minus_two_c2": exp.second_deriv,
        "h3_sup": float(np.max(h3_check(chain, pos))),
        "h4_C": h4.C,
        "h4_kappa": h4.kappa,
        "alpha": alpha,
        "gaussian_domination": gaussian_domination(chain, sol, alpha),
    }
    plot = {"x": ts, "y": [r["abs_lambda"] for r in rows], "title": "|lambda(t)|"}
    return rows, summary, plot


def cmd_poisson(model, params, ctx):
    chain = _need_chain(model)
    sol = solve_poisson(chain)
    rows = [
        {"state": i, "xi": chain.observable[i], "xi_check": sol.xi_check[i], "q_xi_check": sol.q_xi_check[i], "psi": sol.psi[i]}
        for i in range(chain.n_states)
    ]
    summary = poisson_report(chain, sol, _positive(params, "p_max", 60, int))
    n_var = _positive(params, "n_var", 1024, int)
    summary["variance_ratio"] = variance_consistency(chain, sol, n_var).ratio
    summary["n_var"] = n_var
    plot = {"x": np.arange(len(summary["h2_terms"])), "y": summary["h2_terms"], "logy": True, "title": "H2 terms"}
    return rows, summary, plot


def cmd_martingale(model, params, ctx):
    chain = _need_chain(model)
    sol = solve_poisson(chain)
    n_grid = _n_grid(params, [16, 64, 256])
    t_grid = params.get("t_grid", [0.25, 1.0, 2.0])
    rows = martingale_rows(chain, sol, n_grid, t_grid)
    table = prop41_ratio(chain, sol, n_grid, _positive(params, "t_per_n", 64, int))
    summary = {
        "lemma41_deviation": lemma41_check(chain, sol, _positive(params, "max_lag", 20, int)),
        "prop41_ratios": table.ratios,
        "max_abc_residual": max(abs(r["re_total"] - r["re_A"] - r["re_B"] - r["re_C"]) for r in rows),
    }
    plot = {"x": n_grid, "y": table.ratios, "logx": True, "title": "R(n)"}
    return rows, summary, plot


def cmd_charfn(model, params, ctx):
    chain = _need_chain(model)
    sol = solve_poisson(chain)
    n_grid = _n_grid(params, [64, 256, 1024, 4096])
    tpn = _positive(params, "t_per_n", 64, int)
    rt = prop41_ratio(chain, sol, n_grid, tpn)
    rs = cor41_ratio(chain, sol, n_grid, tpn)
    rows = [{"n": n, "R_T": a, "R_S": b} for n, a, b in zip(n_grid, rt.ratios, rs.ratios)]
    summary = {"non_explosive_T": rt.non_explosive(), "non_explosive_S": rs.non_explosive()}
    plot = {"x": n_grid, "y": rs.ratios, "logx": True, "title": "R_S(n)"}
    return rows, summary, plot


def cmd_rate(model, params, ctx):
    n_grid = _n_grid(params, [64, 128, 256, 512, 1024, 2048, 4096])
    paths = _positive(params, "paths", 10**4, int)
    delta = _positive(params, "delta", 0.05)
    if delta >= 1:
        raise ConfigInvalid("delta must lie in (0, 1)")
    if isinstance(model, AffineModel):
        seed = _need_seed(ctx)
        center = params.get("center")
        meta = {}
        if center is None and model.center is None:
            cen = estimate_centering(model, _positive(params, "pilot_steps", 10**6, int), int(params.get("burn_in", 10**4)), seed)
            center = cen.value
            meta = {"center": cen.value, "center_stderr": cen.stderr}
        sigma2 = params.get("sigma2")
        if sigma2 is None:
            n_var = _positive(params, "n_var", 1000, int)
            sums = affine_sums(model, n_var, seed, range(paths, 2 * paths), center=center, workers=ctx["workers"])
            est = mc_variance_estimate(sums, n_var)
            sigma2 = est.sigma2_hat
            meta.update({"sigma2_hat": est.sigma2_hat, "sigma2_stderr": est.stderr})
        report = affine_rate_report(model, float(sigma2), n_grid, paths, seed, center, delta, ctx["workers"])
        report.meta.update(meta)
    else:
        sol = solve_poisson(model)
        budget = _positive(params, "budget", DP_BUDGET, int)
        if params.get("force_mc"):
            budget = 0
        if budget == 0:
            _need_seed(ctx)
        report = chain_rate_report(model, sol, n_grid, None, budget, paths, ctx["seed"] or 0, delta, ctx["workers"])
    summary = report.summary()
    plot = {"x": report.n_grid, "y": report.distances, "logx": True, "logy": True, "fit": (report.slope, report.intercept), "title": f"slope {report.slope:.4f}"}
    return report.rows(), summary, plot


def cmd_integral(model, params, ctx):
    chain = _need_chain(model)
    sol = solve_poisson(chain)
    n_grid = _n_grid(params, [64, 256, 1024, 4096])
    alpha = params.get("alpha")
    if alpha is not None and not alpha > 0:
        raise ConfigInvalid("alpha must be > 0")
    rows = []
    for n in n_grid:
        r = berry_esseen_integral(chain, sol, alpha, n, rtol=params.get("quad_rtol", 1e-8))
        rows.append(
            {"n": n, "A_n": r.A_n, "I_n": r.I_n, "J_n": r.J_n, "K_n": r.K_n, "sqrt_n_A_n": r.A_n * math.sqrt(n), "residual": r.residual, "panels": r.panels}
        )
    summary = {"alpha": r.alpha, "max_residual": max(x["residual"] for x in rows)}
    plot = {"x": n_grid, "y": [x["A_n"] for x in rows], "logx": True, "logy": True, "title": "A_n"}
    return rows, summary, plot


def cmd_doeblin(model, params, ctx):
    chain = _need_chain(model)
    cert = doeblin_ess_bound(chain, _positive(params, "max_ell", 64, int))
    erg = ergodicity_constants(chain)
    rows = [
        {
            "ell": cert.ell,
            "bound": cert.bound,
            "worst_set_value": cert.worst_set_value,
            "fractional_value": cert.fractional_value,
            "contraction": cert.contraction,
            "kappa0": erg.kappa0,
            "C": erg.C,
        }
    ]
    return rows, dict(rows[0]), None


def cmd_condition_star(model, params, ctx):
    m = _need_affine(model)
    seed = _need_seed(ctx)
    r = condition_star_estimate(m, _positive(params, "n0", 1, int), _positive(params, "samples", 10**4, int), seed)
    rows = [{"n0": r.n0, "samples": r.samples, "I1": r.I1, "I1_stderr": r.I1_stderr, "I2": r.I2, "I2_stderr": r.I2_stderr, "pass": r.passed}]
    return rows, dict(rows[0]), None


HANDLERS = {
    "spectral": cmd_spectral,
    "poisson": cmd_poisson,
    "martingale": cmd_martingale,
    "charfn": cmd_charfn,
    "rate": cmd_rate,
    "integral": cmd_integral,
    "doeblin": cmd_doeblin,
    "condition-star": cmd_condition_star,
}


# ---------------------------------------------------------------- entry point


def make_parser():
    p = argparse.ArgumentParser(prog="cltlab", description="Berry-Esseen rate lab for Markov chains")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, help="master seed (overrides params.master_seed)")
    p.add_argument("--out", help="output directory (CLTLAB_OUT overrides)")
    p.add_argument("--format", choices=("csv", "json"), help="single output format (default: both)")
    p.add_argument("--svg", action="store_true", help="also write an SVG plot")
    p.add_argument("--workers", type=int, default=1, help="concurrency cap; never changes results")
    return p


def _error(exc, status):
    code = exc.code if isinstance(exc, CltLabError) else type(exc).__name__
    record = {"error": code, "message": str(exc), "exit_status": status}
    print(json.dumps(record), file=sys.stderr)
    return status


def run(argv=None):
    args = make_parser().parse_args(argv)
    try:
        if args.command == "models":
            print(json.dumps({"models": catalog.describe()}, indent=2))
            return 0
        cfg = load_config(args.config)
        params = cfg.get("params", {})
        if not isinstance(params, dict):
            raise ConfigInvalid("params must be an object")
        _validate_tolerances(params)
        if args.workers < 1:
            raise ConfigInvalid("--workers must be >= 1")
        seed = args.seed if args.seed is not None else params.get("master_seed")
        if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool)):
            raise ConfigInvalid("master_seed must be an integer")
        output = cfg.get("output", {})
        out_dir = os.environ.get("CLTLAB_OUT") or args.out or output.get("directory") or "."
        formats = [args.format] if args.format else output.get("formats", ["csv", "json"])
        if any(f not in ("csv", "json") for f in formats):
            raise ConfigInvalid("formats must be csv or json")
        model = build_model(cfg.get("model"))
        ctx = {"seed": seed, "workers": args.workers}
        rows, summary, plot = HANDLERS[args.command](model, params, ctx)
        stem = args.command.replace("-", "_")
        written = []
        for fmt in formats:
            path = os.path.join(out_dir, f"{stem}.{fmt}")
            written.append(emit_report({"command": args.command, "summary": summary, "rows": rows}, fmt, path))
        if args.svg and plot:
            written.append(emit_report({"plot": plot}, "svg", os.path.join(out_dir, f"{stem}.svg")))
        print(json.dumps({"command": args.command, "files": written}))
        return 0
    except ConfigInvalid as exc:
        return _error(exc, 1)
    except CltLabError as exc:
        return _error(exc, 2)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        return _error(exc, 2)


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
