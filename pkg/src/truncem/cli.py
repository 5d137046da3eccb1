"""Command-line entry point: ``truncem <command> --config FILE [options]``.

Commands write their artifacts into ``--out`` (default ``.``). Every JSON
file carries a ``provenance`` block (tool version, schema version, SHA-256
of the resolved configuration); CSV files start with a ``#`` comment line
holding the same information. Reruns with the same configuration and seed
are byte-identical.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from typing import Any, Sequence

import numpy as np

from . import __version__
from .analysis import (
    d_cross_moment_lambda,
    d_cross_moment_mu,
    d_self_moment,
    em_jacobian,
    finite_diff_jacobian,
    is_spd,
    pd_product_spectrum_check,
)
from .config import ConfigError, ExperimentConfig, load_config
from .em import (
    EMContext,
    fixed_point_residual,
    run_em,
    self_moment,
    target_moment,
)
from .landscape import (
    basin_sample,
    multistart_fixed_points,
    resolve_mu_for_fixed_point,
    scan_fixed_points_1d,
    vector_field_2d,
)
from .model import AnnulusUnion, ConstantOne
from .quad import Density1D, expect
from .rates import (
    FkgCheckSpec,
    StepFunction,
    bracket_check,
    contraction_profile,
    denominator_identity_check,
    fkg_monotone_check,
    fkg_quantitative_check,
    local_rate_check,
    numerator_bound_eval,
    sweep_to_csv,
)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _clean(obj: Any):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [_clean(obj.real), _clean(obj.imag)]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


class Writer:
    def __init__(self, out_dir: str, cfg: ExperimentConfig, command: str):
        self.out = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.prov = {
            "tool": "truncem",
            "tool_version": __version__,
            "schema_version": SCHEMA_VERSION,
            "config_sha256": cfg.sha256(),
            "command": command,
            "seed": cfg.seed,
        }
        self.files: list[str] = []

    def json(self, name: str, payload: dict):
        body = dict(_clean(payload))
        body["provenance"] = self.prov
        path = os.path.join(self.out, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(body, fh, sort_keys=True, indent=2)
            fh.write("\n")
        self.files.append(path)

    def csv(self, name: str, text: str):
        head = (f"# truncem {self.prov['tool_version']} schema {SCHEMA_VERSION} "
                f"config_sha256={self.prov['config_sha256']} command={self.prov['command']}\n")
        path = os.path.join(self.out, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(head + text)
        self.files.append(path)


def _vector(v, d: int, name: str) -> np.ndarray:
    if isinstance(v, str):
        v = [float(s) for s in v.replace(",", " ").split()]
    arr = np.atleast_1d(np.asarray(v, dtype=float)).reshape(-1)
    if arr.size != d:
        raise ConfigError(f"expected {d} values, got {arr.size}", name)
    return arr


def _context(cfg: ExperimentConfig) -> EMContext:
    return EMContext(cfg.params, cfg.trunc, cfg.quad)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_run(cfg: ExperimentConfig, args, w: Writer) -> int:
    ctx = _context(cfg)
    sec = cfg.section("run")
    init = args.init if args.init is not None else sec.get("init", "random")
    if isinstance(init, str) and init.strip().lower() == "random":
        scale = float(sec.get("init_scale", 3.0))
        rng = np.random.default_rng(cfg.seed)
        half = scale * max(ctx.white_norm(ctx.mu), 1e-12)
        lam0 = ctx.whitener.w_inv @ rng.uniform(-half, half, size=ctx.d)
    else:
        lam0 = _vector(init, ctx.d, "run.init")
    perturb = args.perturb if args.perturb is not None else sec.get("perturb")
    perturb_info = None
    if perturb:
        rep = em_jacobian(lam0, ctx)
        mods = np.abs(rep.eigenvalues)
        k = int(np.argmax(mods))
        v = np.real(rep.eigenvectors[:, k])
        v = v / np.linalg.norm(v)
        lam0 = lam0 + float(perturb) * v
        perturb_info = {"eps": float(perturb), "direction": v, "eigenvalue": rep.eigenvalues[k]}
    traj = run_em(lam0, ctx, cfg.outer_tol, cfg.max_iters, cfg.inner_tol)
    summary = {
        "limit_label": traj.limit_label,
        "converged": traj.converged,
        "iterations": traj.iterations,
        "initial_lambda": lam0,
        "final_lambda": traj.final,
        "final_step": traj.final_step,
        "final_residual": fixed_point_residual(traj.final, ctx) if traj.error is None else None,
        "error": traj.error,
        "perturbation": perturb_info,
        "alpha": ctx.alpha,
    }
    w.csv("trajectory.csv", traj.to_csv())
    w.json("run.json", {"summary": summary, "trajectory": traj.to_dict(), "config": cfg.canonical()})
    print(f"{traj.limit_label} after {traj.iterations} iterations")
    return EXIT_SOLVER if traj.error is not None else EXIT_OK


def cmd_scan(cfg: ExperimentConfig, args, w: Writer) -> int:
    ctx = _context(cfg)
    if ctx.d != 1:
        raise ConfigError("scan needs a one-dimensional model (use multistart)", "mu")
    sec = cfg.section("scan")
    m = abs(float(ctx.mu[0]))
    lo = args.lo if args.lo is not None else float(sec.get("lo", -4 * m))
    hi = args.hi if args.hi is not None else float(sec.get("hi", 4 * m))
    n = args.n if args.n is not None else int(sec.get("n", 4000))
    fps = scan_fixed_points_1d(ctx, float(lo), float(hi), int(n))
    w.json("scan.json", {"fixed_points": fps.to_dict(), "config": cfg.canonical()})
    print(f"{len(fps)} fixed points: " + ", ".join(f"{p[0]:.6g}" for p in fps.points))
    return EXIT_OK


def cmd_multistart(cfg: ExperimentConfig, args, w: Writer) -> int:
    ctx = _context(cfg)
    sec = cfg.section("multistart")
    n = args.n_starts if args.n_starts is not None else int(sec.get("n_starts", 64))
    box = args.box_scale if args.box_scale is not None else float(sec.get("box_scale", 3.0))
    fps = multistart_fixed_points(ctx, n, box, cfg.seed, threads=args.threads)
    payload = {"fixed_points": fps.to_dict(), "config": cfg.canonical()}
    at = args.resolve_mu_at if args.resolve_mu_at is not None else sec.get("resolve_mu_at")
    if at is not None:
        p = _vector(at, ctx.d, "multistart.resolve_mu_at")
        mu_star, res, ctx_star = resolve_mu_for_fixed_point(ctx, p)
        rep = em_jacobian(p, ctx_star)
        payload["resolved"] = {"point": p, "mu_star": mu_star, "mu_shift": mu_star - ctx.mu,
                               "residual": res, "jacobian": rep.to_dict()}
    w.json("multistart.json", payload)
    print(f"{len(fps)} fixed points ({fps.meta['non_converged']} starts did not converge)")
    for p, r in zip(fps.points, fps.reports):
        print(f"  {np.array2string(p, precision=6)}  {r.classification}  radius={r.spectral_radius:.6g}")
    return EXIT_OK


def cmd_field(cfg: ExperimentConfig, args, w: Writer) -> int:
    ctx = _context(cfg)
    if ctx.d != 2:
        raise ConfigError("field needs a two-dimensional model", "mu")
    sec = cfg.section("field")
    m = ctx.mu
    lo = _vector(args.lo if args.lo is not None else sec.get("lo", (-2 * abs(m)).tolist()), 2, "field.lo")
    hi = _vector(args.hi if args.hi is not None else sec.get("hi", (2 * abs(m)).tolist()), 2, "field.hi")
    counts = _vector(args.counts if args.counts is not None else sec.get("counts", [21, 21]), 2, "field.counts")
    grid = vector_field_2d(ctx, lo, hi, counts.astype(int), cfg.inner_tol, threads=args.threads)
    w.csv("field.csv", grid.to_csv())
    flagged = int(np.sum(grid.flags != ""))
    w.json("field.json", {"lo": lo, "hi": hi, "counts": counts.astype(int), "flagged_cells": flagged,
                          "config": cfg.canonical()})
    print(f"{grid.displacement.shape[0] * grid.displacement.shape[1]} cells, {flagged} flagged")
    return EXIT_OK


def cmd_basin(cfg: ExperimentConfig, args, w: Writer) -> int:
    ctx = _context(cfg)
    sec = cfg.section("basin")
    n = args.n_inits if args.n_inits is not None else int(sec.get("n_inits", 100))
    scale = args.init_scale if args.init_scale is not None else float(sec.get("init_scale", 3.0))
    rep = basin_sample(ctx, n, scale, cfg.seed, cfg.outer_tol, cfg.max_iters, cfg.inner_tol,
                       threads=args.threads)
    payload = {"basin": rep.to_dict(), "config": cfg.canonical()}
    if ctx.d == 1:
        payload["sign_agreement"] = rep.sign_agreement_1d()
    w.json("basin.json", payload)
    print(json.dumps(rep.tallies, sort_keys=True))
    return EXIT_OK


def cmd_rates(cfg: ExperimentConfig, args, w: Writer) -> int:
    ctx = _context(cfg)
    sec = cfg.section("rates")
    out: dict = {"config": cfg.canonical(), "local_rate": local_rate_check(ctx)}
    init = sec.get("init")
    if init is None:
        init = (0.3 * ctx.mu).tolist()
    traj = run_em(_vector(init, ctx.d, "rates.init"), ctx, cfg.outer_tol, cfg.max_iters, cfg.inner_tol)
    if traj.converged:
        out["contraction"] = contraction_profile(traj, ctx).to_dict()
    else:
        out["contraction"] = {"error": traj.error or "not converged"}
    if ctx.d == 1:
        m = float(ctx.mu[0])
        out["bracket_check"] = bracket_check(traj, m)
        xis = sec.get("xi", [0.0, 0.5 * m, m, 2 * m])
        out["denominator_identity"] = [denominator_identity_check(float(x), ctx) for x in xis]
        lts = sec.get("lambda_t", [0.25 * m, 0.5 * m, 0.9 * m])
        n_xi = int(sec.get("n_xi", 21))
        out["numerator_bound"] = [numerator_bound_eval(float(l), ctx, n_xi) for l in lts]
    radii = sec.get("sweep_radii")
    if radii:
        ctxs = [EMContext(cfg.params, AnnulusUnion([(0.0, float(r))]), cfg.quad) for r in radii]
        rows = []
        for r, c in zip(radii, ctxs):
            row = local_rate_check(c)
            row["label"] = f"disk_{float(r):g}"
            rows.append(row)
        out["sweep"] = rows
        w.csv("rate_sweep.csv", sweep_to_csv(rows))
    w.json("rates.json", out)
    lr = out["local_rate"]
    print(f"alpha={lr['alpha']:.6g} radius={lr['radius']:.6g}")
    return EXIT_OK


def _random_step(rng: np.random.Generator, lo: float, hi: float) -> StepFunction:
    k = int(rng.integers(1, 5))
    return StepFunction(tuple(np.sort(rng.uniform(lo, hi, k))), tuple(rng.uniform(0, 1, k)))


def verify_suite(ctx: EMContext, seed: int = 0, fd_tol: float = 1e-4) -> dict:
    """Hard invariants (must hold) and soft reports for one context."""
    rng = np.random.default_rng(seed)
    hard: dict = {}
    soft: dict = {}
    d = ctx.d
    mu = ctx.mu

    def rec(name, ok, **info):
        hard[name] = {"pass": bool(ok), **info}

    one = expect(lambda x: np.ones(x.shape[0]), ctx.params, ctx.trunc, ctx.cfg)
    rec("normalization", abs(one.value - 1) <= ctx.cfg.abs_tol + 1e-15, value=one.value)
    rec("alpha_positive", ctx.alpha > 0, alpha=ctx.alpha)

    probes = [0.5 * mu, mu + 0.3 * rng.standard_normal(d)]
    worst = {"self": 0.0, "cross_lambda": 0.0, "cross_mu": 0.0}
    pd_ok = True
    for lam in probes:
        a = d_self_moment(lam, ctx)
        fa = finite_diff_jacobian(lambda l: self_moment(l, ctx), lam)
        b = d_cross_moment_lambda(lam, ctx)
        fb = finite_diff_jacobian(lambda l: target_moment(l, ctx), lam)
        c = d_cross_moment_mu(lam, ctx)
        fc = finite_diff_jacobian(lambda m: target_moment(lam, ctx.with_mu(m)), mu)
        for key, an, fd in (("self", a, fa), ("cross_lambda", b, fb), ("cross_mu", c, fc)):
            scale = max(float(np.abs(fd).max()), 1e-12)
            worst[key] = max(worst[key], float(np.abs(an - fd).max()) / scale)
        pd_ok &= is_spd(a @ ctx.sigma) and is_spd(b @ ctx.sigma)
    for key, v in worst.items():
        rec(f"derivative_fd_{key}", v <= fd_tol, max_relative_error=v)
    rec("self_and_cross_jacobians_pd", pd_ok)

    for name, p in (("plus_mu", mu), ("zero", np.zeros(d)), ("minus_mu", -mu)):
        r, e = fixed_point_residual(p, ctx, return_error=True)
        rec(f"fixed_point_{name}", r <= 10 * e + 1e-14, residual=r, error=e)

    j0 = em_jacobian(np.zeros(d), ctx)
    jp = em_jacobian(mu, ctx)
    jm = em_jacobian(-mu, ctx)
    rec("jacobian_zero_unstable", float(np.max(np.abs(j0.eigenvalues))) > 1, moduli=np.abs(j0.eigenvalues))
    rec("jacobian_mu_attracting", jp.spectral_radius < 1 and jm.spectral_radius < 1,
        radius_plus=jp.spectral_radius, radius_minus=jm.spectral_radius)

    if isinstance(ctx.trunc, ConstantOne):
        lam = rng.standard_normal(d)
        h = self_moment(lam, ctx)
        rec("untruncated_identity", float(np.abs(h - lam).max()) <= 1e-8 * max(1.0, float(np.abs(lam).max())))

    if d == 1:
        m = float(mu[0])
        discs = [denominator_identity_check(x, ctx)["relative_discrepancy"] for x in (0.3 * m, m, 1.7 * m)]
        rec("denominator_identity", max(discs) <= 1e-6, discrepancies=discs)
        if m != 0:
            nb = numerator_bound_eval(0.5 * abs(m), ctx.with_mu([abs(m)]), 11)
            rec("numerator_positive", nb["positive"], minimum=nb["minimum"])
            soft["numerator_fitted_constant"] = nb["fitted_constant"]
        dist = Density1D.truncated_mixture(ctx.params, ctx.trunc)
    else:
        dist = Density1D.normal(0.0, 1.0)
    fkg_ok = True
    for _ in range(20):
        f = _random_step(rng, dist.lo / 3, dist.hi / 3)
        g = _random_step(rng, dist.lo / 3, dist.hi / 3)
        fkg_ok &= fkg_monotone_check(f, g, dist, ctx.cfg)
    rec("fkg_monotone", fkg_ok)

    pd_pairs = True
    for _ in range(20):
        x = rng.standard_normal((3, 3))
        y = rng.standard_normal((3, 3))
        pd_pairs &= pd_product_spectrum_check(x @ x.T + 0.1 * np.eye(3), y @ y.T + 0.1 * np.eye(3))
    rec("pd_product_spectrum", pd_pairs)

    q = fkg_quantitative_check(FkgCheckSpec(lambda x: x * x, lambda x: x * x, 0.5, Density1D.uniform(-1, 1)))
    soft["fkg_quantitative_uniform"] = q
    soft["local_rate"] = local_rate_check(ctx)
    return {"hard": hard, "soft": soft, "all_hard_pass": all(v["pass"] for v in hard.values())}


def cmd_verify(cfg: ExperimentConfig, args, w: Writer) -> int:
    ctx = _context(cfg)
    res = verify_suite(ctx, cfg.seed)
    res["config"] = cfg.canonical()
    w.json("verify.json", res)
    for name, v in sorted(res["hard"].items()):
        print(f"{'PASS' if v['pass'] else 'FAIL'} {name}")
    q = res["soft"]["fkg_quantitative_uniform"]
    print(f"SOFT fkg_quantitative literal bound holds={q['holds_std']} folded bound holds={q['holds_folded']}")
    return EXIT_OK if res["all_hard_pass"] else EXIT_CHECK_FAILED


COMMANDS = {
    "run": cmd_run,
    "scan": cmd_scan,
    "multistart": cmd_multistart,
    "field": cmd_field,
    "basin": cmd_basin,
    "rates": cmd_rates,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="truncem", description="Population EM for truncated symmetric mixtures")
    p.add_argument("--version", action="version", version=f"truncem {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="YAML experiment file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--tol-inner", type=float, default=None)
        sp.add_argument("--tol-outer", type=float, default=None)

    sp = sub.add_parser("run", help="one EM trajectory")
    common(sp)
    sp.add_argument("--init", default=None, help='comma-separated start or "random"')
    sp.add_argument("--perturb", type=float, default=None,
                    help="shift the start along the dominant Jacobian eigendirection")
    sp = sub.add_parser("scan", help="1-D fixed-point scan")
    common(sp)
    sp.add_argument("--lo", type=float, default=None)
    sp.add_argument("--hi", type=float, default=None)
    sp.add_argument("--n", type=int, default=None)
    sp = sub.add_parser("multistart", help="Newton multistart fixed-point search")
    common(sp)
    sp.add_argument("--n-starts", type=int, default=None)
    sp.add_argument("--box-scale", type=float, default=None)
    sp.add_argument("--resolve-mu-at", default=None,
                    help="re-solve the true mean so this point is an exact fixed point")
    sp = sub.add_parser("field", help="2-D vector field of the EM update")
    common(sp)
    sp.add_argument("--lo", default=None)
    sp.add_argument("--hi", default=None)
    sp.add_argument("--counts", default=None)
    sp = sub.add_parser("basin", help="random-initialisation basin tallies")
    common(sp)
    sp.add_argument("--n-inits", type=int, default=None)
    sp.add_argument("--init-scale", type=float, default=None)
    sp = sub.add_parser("rates", help="contraction and rate reports")
    common(sp)
    sp = sub.add_parser("verify", help="invariant suite; nonzero exit on hard failure")
    common(sp)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.tol_inner is not None:
            cfg.inner_tol = args.tol_inner
        if args.tol_outer is not None:
            cfg.outer_tol = args.tol_outer
        w = Writer(args.out, cfg, args.command)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](cfg, args, w)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
