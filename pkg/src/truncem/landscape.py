"""Fixed points of the EM map, vector fields and basin statistics."""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .analysis import d_cross_moment_mu, em_jacobian
from .em import (
    DEFAULT_INNER_TOL,
    DEFAULT_OUTER_TOL,
    EMContext,
    MINUS_MU,
    PLUS_MU,
    AccuracyConflict,
    em_step,
    fixed_point_map,
    fixed_point_residual,
    mu_moments,
    run_em,
    self_moments,
)
from .model import log_mixture_density
from .quad import _axis_edges, _coarse_count, _panel_nodes, _err_heuristic

__all__ = [
    "FixedPointSet",
    "VectorFieldGrid",
    "BasinReport",
    "PsiEvaluator1D",
    "scan_fixed_points_1d",
    "multistart_fixed_points",
    "newton_fixed_point",
    "resolve_mu_for_fixed_point",
    "vector_field_2d",
    "basin_sample",
]


def _pmap(fn: Callable, items: Sequence, threads: int = 1) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass
class FixedPointSet:
    points: list
    residuals: list
    reports: list
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.points)

    def contains(self, p, tol: float) -> bool:
        p = np.asarray(p, dtype=float)
        return any(np.linalg.norm(q - p) <= tol for q in self.points)

    def to_dict(self) -> dict:
        return {
            "points": [[float(v) for v in p] for p in self.points],
            "residuals": [float(r) for r in self.residuals],
            "reports": [r.to_dict() for r in self.reports],
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _dedupe(points: list, residuals: list, ctx: EMContext, radius: float):
    keep_p, keep_r = [], []
    for p, r in sorted(zip(points, residuals), key=lambda pr: pr[1]):
        if all(ctx.white_norm(p - q) > radius for q in keep_p):
            keep_p.append(p)
            keep_r.append(r)
    order = sorted(range(len(keep_p)), key=lambda i: tuple(np.round(keep_p[i], 12)))
    return [keep_p[i] for i in order], [keep_r[i] for i in order]


# ---------------------------------------------------------------------------
# one-dimensional scan
# ---------------------------------------------------------------------------


class PsiEvaluator1D:
    """Vectorised ``psi(lambda) = b(lambda) - H(lambda)`` for a 1-D context.

    A single node set, valid for every ``|lambda| <= lam_max``, is shared by all
    evaluations so the scan costs a few dense matrix products.
    """

    def __init__(self, ctx: EMContext, lam_max: float, chunk: int = 400):
        if ctx.d != 1:
            raise ValueError("the 1-D scan needs a one-dimensional context")
        self.ctx = ctx
        self.chunk = chunk
        cfg = ctx.cfg
        s2 = float(ctx.sigma[0, 0])
        sd = math.sqrt(s2)
        mu = abs(float(ctx.mu[0]))
        reach = max(lam_max, mu) + cfg.window_radius * sd
        slo, shi = ctx.trunc.support_box(1)
        lo, hi = max(-reach, float(slo[0])), min(reach, float(shi[0]))
        breaks = list(ctx.trunc.axis_breakpoints(1)[0]) + [mu, -mu]
        h = 3.0 * sd
        slope = float(ctx.trunc.axis_slopes(1)[0])
        if slope > 0:
            h = min(h, 2.0 / 1.2 * math.pi / (2 * slope))
        pole = math.pi * s2 / (2 * max(lam_max, mu, 1e-12))
        edges = _axis_edges(lo, hi, breaks, h, pole, 0)
        self.s2 = s2
        self.fine = self._nodes(edges, cfg.nodes_per_axis)
        self.coarse = self._nodes(edges, _coarse_count(cfg.nodes_per_axis))
        self.norm = 0.5 * math.log(2 * math.pi * s2)

    def _nodes(self, edges, n):
        x, w = _panel_nodes(edges, n)
        x, w = x.ravel(), w.ravel()
        s = self.ctx.trunc(x.reshape(-1, 1))
        keep = (s != 0) & (w != 0)
        x, w, s = x[keep], w[keep], s[keep]
        wt = w * s
        rho_mu = wt * np.exp(log_mixture_density(self.ctx.params, x.reshape(-1, 1)))
        return x, wt, rho_mu

    def _psi(self, lams: np.ndarray, nodes) -> tuple[np.ndarray, np.ndarray]:
        x, wt, rho_mu = nodes
        t = np.tanh(np.outer(lams, x) / self.s2)
        xr = x * rho_mu
        b = (t @ xr) / rho_mu.sum()
        a = np.abs(np.outer(lams, x)) / self.s2
        # log of cosh(x lam / s2) * exp(-(x^2 + lam^2) / (2 s2)), shifted per row
        logw = a + np.log1p(np.exp(-2 * a)) - (x[None, :] ** 2 + lams[:, None] ** 2) / (2 * self.s2)
        logw -= logw.max(axis=1, keepdims=True)
        rho = wt[None, :] * np.exp(logw)
        hval = np.sum(rho * t * x[None, :], axis=1) / rho.sum(axis=1)
        scale = (np.abs(t) @ np.abs(xr)) / rho_mu.sum() + np.sum(rho * np.abs(t * x[None, :]), axis=1) / rho.sum(axis=1)
        return b - hval, scale

    def __call__(self, lams) -> np.ndarray:
        return self.evaluate(lams)[0]

    def evaluate(self, lams) -> tuple[np.ndarray, np.ndarray]:
        """Values and error estimates of ``psi`` on an array of lambdas."""
        lams = np.atleast_1d(np.asarray(lams, dtype=float))
        vals, errs = [], []
        for i in range(0, lams.size, self.chunk):
            part = lams[i:i + self.chunk]
            f, scale = self._psi(part, self.fine)
            c, _ = self._psi(part, self.coarse)
            vals.append(f)
            errs.append(np.maximum(_err_heuristic(f - c, scale), 50 * np.finfo(float).eps * scale))
        return np.concatenate(vals), np.concatenate(errs)

    def scalar(self, lam: float) -> float:
        return float(self.evaluate([lam])[0][0])


def _psi_prime_1d(ctx: EMContext, lam: float) -> float:
    sm = self_moments(ctx, [lam])
    mm = mu_moments(ctx, [lam], ("B",))
    return float((mm.big_b[0, 0] - sm.cov[0, 0]) / ctx.sigma[0, 0])


def scan_fixed_points_1d(ctx: EMContext, lo: float, hi: float, n: int = 4000,
                         root_tol: float = 1e-9, dedupe: float = 1e-6,
                         classify: bool = True) -> FixedPointSet:
    """All roots of ``psi`` on ``[lo, hi]`` found from an ``n``-panel grid.

    Sign changes are bracketed and solved by Brent's method; grid points
    where ``psi`` is exactly zero are roots as they stand. Newton runs from
    local minima of ``|psi|`` catch tangential roots.
    """
    if not lo < hi:
        raise ValueError("scan requires lo < hi")
    if n < 100:
        raise ValueError("scan requires n >= 100")
    ev = PsiEvaluator1D(ctx, max(abs(lo), abs(hi)))
    grid = np.linspace(lo, hi, n + 1)
    psi, _ = ev.evaluate(grid)
    roots: list[float] = []
    sgn = np.sign(psi)
    roots.extend(float(v) for v in grid[sgn == 0])
    nz = np.flatnonzero(sgn != 0)
    bracketed = set()
    for i, j in zip(nz[:-1], nz[1:]):
        if sgn[i] != sgn[j] and j == i + 1:
            roots.append(_bracketed_root(ev, grid[i], grid[j]))
            bracketed.update((i, j))
    absps = np.abs(psi)
    for i in range(1, n):
        if sgn[i] == 0 or i in bracketed:
            continue
        if absps[i] <= absps[i - 1] and absps[i] <= absps[i + 1]:
            r = _newton_1d(ev, ctx, grid[i], grid[i - 1], grid[i + 1], root_tol)
            if r is not None:
                roots.append(r)
    pts, res = [], []
    for r in roots:
        val = abs(ev.scalar(r))
        if val <= root_tol:
            pts.append(np.array([r]))
            res.append(fixed_point_residual([r], ctx))
    pts, res = _dedupe(pts, res, ctx, dedupe)
    reports = [em_jacobian(p, ctx) for p in pts] if classify else []
    return FixedPointSet(pts, res, reports, {"lo": lo, "hi": hi, "n": n, "kind": "scan_1d"})


def _bracketed_root(ev: PsiEvaluator1D, a: float, b: float) -> float:
    fa, fb = ev.scalar(a), ev.scalar(b)
    if fa == 0 or fb == 0 or np.sign(fa) == np.sign(fb):
        # grid and point evaluations round differently at a root sitting on the grid
        return float(a if abs(fa) <= abs(fb) else b)
    return float(brentq(ev.scalar, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200))


def _newton_1d(ev: PsiEvaluator1D, ctx: EMContext, x0: float, a: float, b: float, tol: float):
    x = x0
    for _ in range(30):
        f = ev.scalar(x)
        if abs(f) <= tol:
            return x
        dfx = _psi_prime_1d(ctx, x)
        if dfx == 0:
            return None
        x = x - f / dfx
        if not (a - (b - a) <= x <= b + (b - a)):
            return None
    return x if abs(ev.scalar(x)) <= tol else None


# ---------------------------------------------------------------------------
# multistart Newton
# ---------------------------------------------------------------------------


def newton_fixed_point(ctx: EMContext, start, tol: float = 1e-12, max_iter: int = 60):
    """Damped Newton on ``psi`` from ``start``; returns ``(point, residual, iters)``.

    The Jacobian of ``psi`` is ``(B - A) Sigma^{-1}``.
    """
    lam = np.atleast_1d(np.asarray(start, dtype=float)).copy()
    psi, _ = fixed_point_map(lam, ctx)
    rn = float(np.linalg.norm(psi))
    for it in range(max_iter):
        if rn <= tol:
            return lam, rn, it
        sm = self_moments(ctx, lam)
        mm = mu_moments(ctx, lam, ("B",))
        m = mm.big_b - sm.cov
        try:
            step = -ctx.sigma @ np.linalg.solve(m, psi)
        except np.linalg.LinAlgError:
            step = -ctx.sigma @ np.linalg.lstsq(m, psi, rcond=None)[0]
        sn = float(np.linalg.norm(step))
        if sn > ctx.trust_radius:
            step *= ctx.trust_radius / sn
        t = 1.0
        for _ in range(30):
            cand = lam + t * step
            try:
                psi_c, _ = fixed_point_map(cand, ctx)
            except (ArithmeticError, ValueError):
                t *= 0.5
                continue
            rc = float(np.linalg.norm(psi_c))
            if rc < rn:
                break
            t *= 0.5
        else:
            return lam, rn, it
        lam, psi, rn = cand, psi_c, rc
    return lam, rn, max_iter


def multistart_fixed_points(ctx: EMContext, n_starts: int = 64, box_scale: float = 3.0,
                            rng_seed: int = 0, accept_tol: float = 1e-8, threads: int = 1,
                            classify: bool = True) -> FixedPointSet:
    """Fixed points found by Newton on ``psi`` from random and canonical starts.

    Random starts are uniform in the whitened box
    ``[-box_scale ||mu||, box_scale ||mu||]^d``; ``-mu, 0, mu`` are always
    probed too. Roots with residual above ``accept_tol`` are discarded and
    counted.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    rng = np.random.default_rng(rng_seed)
    half = box_scale * max(float(np.linalg.norm(ctx.whitener.w @ ctx.mu)), 1e-12)
    white = rng.uniform(-half, half, size=(n_starts, ctx.d))
    starts = [ctx.whitener.w_inv @ y for y in white]
    starts += [ctx.mu.copy(), np.zeros(ctx.d), -ctx.mu]

    def solve(s):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                return newton_fixed_point(ctx, s)
        except (ArithmeticError, ValueError, RuntimeError):
            return None

    results = _pmap(solve, starts, threads)
    pts, res = [], []
    failed = 0
    for r in results:
        if r is None or not r[1] <= accept_tol:
            failed += 1
            continue
        pts.append(r[0])
        res.append(fixed_point_residual(r[0], ctx))
    radius = 1e-5 * (1.0 + float(np.linalg.norm(ctx.mu)))
    pts, res = _dedupe(pts, res, ctx, radius)
    reports = _pmap(lambda p: em_jacobian(p, ctx), pts, threads) if classify else []
    meta = {"kind": "multistart", "n_starts": n_starts, "box_scale": box_scale,
            "rng_seed": rng_seed, "non_converged": failed, "dedupe_radius": radius}
    return FixedPointSet(pts, res, reports, meta)


def resolve_mu_for_fixed_point(ctx: EMContext, point, mu0=None, tol: float = 1e-13,
                               max_iter: int = 40) -> tuple[np.ndarray, float, EMContext]:
    """Find the true mean ``mu*`` near ``mu0`` for which ``point`` is an exact fixed point.

    Solves ``b_mu(point) = H(point)`` in ``mu`` by Newton with the Jacobian
    ``d b / d mu``; ``H(point)`` does not depend on ``mu``.
    """
    point = np.atleast_1d(np.asarray(point, dtype=float))
    mu = np.array(ctx.mu if mu0 is None else mu0, dtype=float)
    target = self_moments(ctx, point, need_m2=False).h
    cur = ctx.with_mu(mu)
    r = mu_moments(cur, point, ("b",)).b - target
    rn = float(np.linalg.norm(r))
    for _ in range(max_iter):
        if rn <= tol:
            break
        jac = d_cross_moment_mu(point, cur)
        step = -np.linalg.solve(jac, r)
        t = 1.0
        for _ in range(30):
            cand = ctx.with_mu(mu + t * step)
            rc = mu_moments(cand, point, ("b",)).b - target
            rcn = float(np.linalg.norm(rc))
            if rcn < rn:
                break
            t *= 0.5
        else:
            break
        mu, cur, r, rn = mu + t * step, cand, rc, rcn
    return mu, fixed_point_residual(point, cur), cur


# ---------------------------------------------------------------------------
# vector field and basins
# ---------------------------------------------------------------------------


@dataclass
class VectorFieldGrid:
    x_axis: np.ndarray
    y_axis: np.ndarray
    displacement: np.ndarray  # (nx, ny, 2)
    flags: np.ndarray  # (nx, ny) strings, "" when the cell solved cleanly

    def at(self, i: int, j: int) -> np.ndarray:
        return self.displacement[i, j]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda_1", "lambda_2", "d_1", "d_2", "flag"])
        for i, x in enumerate(self.x_axis):
            for j, y in enumerate(self.y_axis):
                d = self.displacement[i, j]
                w.writerow([repr(float(x)), repr(float(y)), repr(float(d[0])), repr(float(d[1])),
                            self.flags[i, j]])
        return buf.getvalue()


def vector_field_2d(ctx: EMContext, lo: Sequence[float], hi: Sequence[float],
                    counts: Sequence[int], inner_tol: float = DEFAULT_INNER_TOL,
                    threads: int = 1) -> VectorFieldGrid:
    """Displacement ``em_step(lambda) - lambda`` on a regular grid (``d = 2``).

    Cells whose inner solve fails carry NaN displacement and a flag.
    """
    if ctx.d != 2:
        raise ValueError("vector_field_2d needs d = 2")
    xs = np.linspace(lo[0], hi[0], int(counts[0]))
    ys = np.linspace(lo[1], hi[1], int(counts[1]))
    cells = [(i, j) for i in range(xs.size) for j in range(ys.size)]

    def one(ij):
        lam = np.array([xs[ij[0]], ys[ij[1]]])
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", AccuracyConflict)
                return em_step(lam, ctx, inner_tol) - lam, ""
        except Exception as exc:  # flagged per cell
            return np.full(2, np.nan), type(exc).__name__

    out = _pmap(one, cells, threads)
    disp = np.full((xs.size, ys.size, 2), np.nan)
    flags = np.full((xs.size, ys.size), "", dtype=object)
    for (i, j), (dv, fl) in zip(cells, out):
        disp[i, j] = dv
        flags[i, j] = fl
    return VectorFieldGrid(xs, ys, disp, flags)


@dataclass
class BasinReport:
    inits: np.ndarray
    labels: list
    finals: np.ndarray
    iterations: list
    errors: list

    @property
    def tallies(self) -> dict:
        return dict(sorted(Counter(self.labels).items()))

    @property
    def fractions(self) -> dict:
        n = len(self.labels)
        return {k: v / n for k, v in self.tallies.items()}

    def sign_agreement_1d(self) -> float:
        """Fraction of 1-D runs whose limit has the sign of their initialisation."""
        ok = 0
        for x0, lab in zip(self.inits[:, 0], self.labels):
            ok += (lab == PLUS_MU and x0 > 0) or (lab == MINUS_MU and x0 < 0)
        return ok / len(self.labels)

    def to_dict(self) -> dict:
        return {
            "tallies": self.tallies,
            "fractions": self.fractions,
            "runs": [
                {"init": [float(v) for v in x0], "label": lab, "final": [float(v) for v in fin],
                 "iterations": it, "error": err}
                for x0, lab, fin, it, err in zip(self.inits, self.labels, self.finals,
                                                 self.iterations, self.errors)
            ],
        }


def basin_sample(ctx: EMContext, n_inits: int = 100, init_scale: float = 3.0, rng_seed: int = 0,
                 outer_tol: float = DEFAULT_OUTER_TOL, max_iters: int = 1000,
                 inner_tol: float = DEFAULT_INNER_TOL, threads: int = 1,
                 exclude_radius: float = 1e-3) -> BasinReport:
    """Run EM from random initialisations and tally the limits.

    Starts are uniform in the whitened box ``[-init_scale ||mu||, init_scale ||mu||]^d``
    with the ball ``||lambda_0|| < exclude_radius`` rejected.
    """
    if n_inits < 1:
        raise ValueError("n_inits must be >= 1")
    rng = np.random.default_rng(rng_seed)
    half = init_scale * max(float(np.linalg.norm(ctx.whitener.w @ ctx.mu)), 1e-12)
    inits = []
    while len(inits) < n_inits:
        lam = ctx.whitener.w_inv @ rng.uniform(-half, half, size=ctx.d)
        if np.linalg.norm(lam) >= exclude_radius:
            inits.append(lam)

    def one(x0):
        tr = run_em(x0, ctx, outer_tol, max_iters, inner_tol)
        return tr.limit_label, tr.final, tr.iterations, tr.error

    out = _pmap(one, inits, threads)
    return BasinReport(np.array(inits), [o[0] for o in out], np.array([o[1] for o in out]),
                       [o[2] for o in out], [o[3] for o in out])
