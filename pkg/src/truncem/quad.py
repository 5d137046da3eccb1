"""Expectations under the truncated mixture and the survival mass.

All routines reduce to weighted node sums: a rule is a set of points ``X``
with weights ``rho`` already multiplied by the mixture density and the
truncation, so that ``E[g] = sum(rho g(X)) / sum(rho)``. Every rule carries
a second, coarser rule on the same panels; the difference between the two
drives error estimates and refinement.

Frames
------
* Cartesian: panels aligned with truncation breakpoints (boxes, soft
  functions, 1-D sets). One-dimensional problems refine panels locally.
* Rotated whitened frame: for ``S = 1`` and half-spaces. Axes spanned by the
  mixture centre, the half-space normal and declared integrand directions
  get panels; the remaining axes use Gauss-Hermite nodes, exact for
  integrands polynomial in those coordinates.
* Polar / spherical: for Mahalanobis annuli in two and three dimensions.
* Monte Carlo: importance sampling from the untruncated mixture, used for
  ``d > 3`` or when the truncation geometry cannot be panel aligned.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .model import (
    AnnulusUnion,
    ConstantOne,
    DegenerateTruncationError,
    HalfSpace,
    MixtureParams,
    Truncation,
    Whitener,
    bind_truncation,
    log_mixture_density,
    whiten,
)

__all__ = [
    "QuadConfig",
    "Estimate",
    "QuadratureError",
    "LowMassWarning",
    "WeightedRule",
    "build_rule",
    "survival_mass",
    "expect",
    "integrate_1d",
    "Density1D",
    "ADAPTIVE_1D",
    "TENSOR",
    "MONTE_CARLO",
]

ADAPTIVE_1D = "Adaptive1D"
TENSOR = "Tensor"
MONTE_CARLO = "MonteCarlo"

_EPS = np.finfo(float).eps
_CHUNK = 1 << 17
# a panel of half-width w/2 is accepted when the nearest complex singularity
# sits at least 1.2 half-widths away; with 20 Gauss nodes that is ~1e-17
_POLE_RATIO = 1.2
_GAUSS_WIDTH = 3.0  # panel width in conditional standard deviations
_LOW_MASS = 1e-6
_MIN_MASS = 1e-250
_MAX_NODES = 8_000_000
_MAX_LEVEL = 6


class QuadratureError(ArithmeticError):
    """Integration failed (non-finite integrand or unusable geometry)."""


class LowMassWarning(UserWarning):
    """Survival mass is so small that integration noise may dominate."""


@dataclass(frozen=True)
class QuadConfig:
    abs_tol: float = 1e-13
    rel_tol: float = 1e-12
    window_radius: float = 12.0
    max_panels: int = 4096
    nodes_per_axis: int = 20
    mc_samples: int = 200_000
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("abs_tol and rel_tol must be positive")
        if self.window_radius < 6:
            raise ValueError("window_radius must be at least 6")
        if self.nodes_per_axis < 8:
            raise ValueError("nodes_per_axis must be at least 8")
        if self.max_panels < 1 or self.mc_samples < 2:
            raise ValueError("max_panels and mc_samples must be positive")

    def to_dict(self) -> dict:
        return {
            "abs_tol": self.abs_tol,
            "rel_tol": self.rel_tol,
            "window_radius": self.window_radius,
            "max_panels": self.max_panels,
            "nodes_per_axis": self.nodes_per_axis,
            "mc_samples": self.mc_samples,
            "rng_seed": self.rng_seed,
        }


@dataclass(frozen=True)
class Estimate:
    """Integrated value with an error estimate and the method that produced it."""

    value: float | np.ndarray
    error_estimate: float
    method: str
    n_nodes: int = 0

    def __post_init__(self):
        object.__setattr__(self, "error_estimate", float(self.error_estimate))
        if not math.isfinite(self.error_estimate) or self.error_estimate < 0:
            raise QuadratureError(f"invalid error estimate {self.error_estimate}")

    def __float__(self):
        return float(self.value)


# ---------------------------------------------------------------------------
# one-dimensional building blocks
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


@lru_cache(maxsize=None)
def _hermite(k: int) -> tuple[np.ndarray, np.ndarray]:
    # nodes for weight exp(-z^2/2); rescale to plain dz integration
    z, w = np.polynomial.hermite_e.hermegauss(k)
    return z, w * np.exp(0.5 * z * z)


def _coarse_count(n: int) -> int:
    return max(4, (2 * n) // 3)


def _panel_nodes(edges: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes for every panel; arrays of shape ``(P, n)``."""
    x, w = _gauss_legendre(n)
    a = edges[:-1, None]
    b = edges[1:, None]
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def _axis_edges(lo: float, hi: float, breaks: Sequence[float], h_max: float,
                pole: float | None, level: int) -> np.ndarray:
    """Panel edges on ``[lo, hi]``.

    Edges include every breakpoint inside the interval. Panels are at most
    ``h_max`` wide; when ``pole`` is given, the integrand has singularities at
    ``+-i * pole`` (relative to 0) and panels near 0 are graded so each stays
    well separated from them. ``level`` halves every panel that many times.
    """
    if not hi > lo:
        raise QuadratureError(f"empty integration interval [{lo}, {hi}]")
    pts = [lo, hi]
    pts.extend(float(b) for b in breaks if lo < b < hi)
    if pole is not None:
        if lo < 0.0 < hi:
            pts.append(0.0)
        reach = max(abs(lo), abs(hi))
        e = 0.0
        while e < reach:
            e += min(h_max, 2.0 / _POLE_RATIO * math.hypot(e, pole))
            if lo < e < hi:
                pts.append(e)
            if lo < -e < hi:
                pts.append(-e)
    pts = np.unique(np.asarray(pts, dtype=float))
    out = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        k = max(1, int(math.ceil((b - a) / h_max - 1e-9))) << level
        out.extend(np.linspace(a, b, k + 1)[1:])
    edges = np.asarray(out)
    keep = np.concatenate([[True], np.diff(edges) > 1e-13 * max(1.0, abs(hi), abs(lo))])
    edges = edges[keep]
    edges[-1] = hi
    return edges


def _err_heuristic(diff: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """QUADPACK-style sharpening of a fine-minus-coarse difference."""
    diff = np.abs(diff)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(scale > 0, 200.0 * diff / scale, 0.0)
    return diff * np.minimum(1.0, r ** 1.5)


# ---------------------------------------------------------------------------
# rules
# ---------------------------------------------------------------------------


@dataclass
class _Axis:
    lo: float
    hi: float
    breaks: tuple = ()
    h_max: float = 1.0
    pole: float | None = None
    hermite: int = 0

    def nodes(self, n: int, level: int) -> tuple[np.ndarray, np.ndarray]:
        if self.hermite:
            return _hermite(self.hermite)
        edges = _axis_edges(self.lo, self.hi, self.breaks, self.h_max, self.pole, level)
        x, w = _panel_nodes(edges, n)
        return x.ravel(), w.ravel()


@dataclass
class _Block:
    """Tensor product of axes mapped to data space by ``mapper``."""

    axes: list
    mapper: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]

    def points(self, n: int, level: int) -> tuple[np.ndarray, np.ndarray]:
        nodes = [ax.nodes(n, level) for ax in self.axes]
        grids = np.meshgrid(*[z for z, _ in nodes], indexing="ij")
        wgrid = np.meshgrid(*[w for _, w in nodes], indexing="ij")
        z = np.stack([g.ravel() for g in grids], axis=1)
        w = np.prod(np.stack([g.ravel() for g in wgrid], axis=1), axis=1)
        x, jac = self.mapper(z)
        return x, w * jac

    def size(self, n: int, level: int) -> int:
        total = 1
        for ax in self.axes:
            if ax.hermite:
                total *= ax.hermite
            else:
                total *= (len(_axis_edges(ax.lo, ax.hi, ax.breaks, ax.h_max, ax.pole, level)) - 1) * n
        return total


def _density_weights(params: MixtureParams, trunc: Truncation, wh: Whitener,
                     x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if x.shape[0] == 0:
        return x, w
    s = trunc(x)
    keep = (s != 0) & (w != 0)
    x = x[keep]
    rho = w[keep] * s[keep] * np.exp(log_mixture_density(params, x, wh))
    keep = rho != 0
    return x[keep], rho[keep]


def _reduce(g: Callable, x: np.ndarray, rho: np.ndarray):
    """Return (sum rho g, sum |rho g|) with g evaluated in chunks."""
    total = None
    scale = None
    for i in range(0, max(x.shape[0], 1), _CHUNK):
        xs = x[i:i + _CHUNK]
        vals = np.asarray(g(xs), dtype=float)
        if vals.shape[0] != xs.shape[0]:
            raise QuadratureError("integrand must return one value per point")
        if not np.all(np.isfinite(vals)):
            raise QuadratureError("non-finite integrand value")
        r = rho[i:i + _CHUNK].reshape((-1,) + (1,) * (vals.ndim - 1))
        part = np.sum(r * vals, axis=0)
        apart = np.sum(np.abs(r * vals), axis=0)
        total = part if total is None else total + part
        scale = apart if scale is None else scale + apart
    return total, scale


class WeightedRule:
    """Node set for one measure ``f_params * S`` plus its coarse companion.

    ``expect`` refines (finer panels) until the estimated error meets the
    configured tolerance or the panel budget is spent.
    """

    def __init__(self, params: MixtureParams, trunc: Truncation, cfg: QuadConfig,
                 blocks: list[_Block] | None, method: str, level: int = 0,
                 wh: Whitener | None = None, adaptive_1d: bool = False):
        self.params = params
        self.trunc = trunc
        self.cfg = cfg
        self.blocks = blocks
        self.method = method
        self.level = level
        self.wh = wh or whiten(params)
        self.adaptive_1d = adaptive_1d
        self._finer: WeightedRule | None = None
        self._mass: Estimate | None = None
        n = cfg.nodes_per_axis
        if method == MONTE_CARLO:
            self._build_mc()
            return
        fx, fw, cx, cw = [], [], [], []
        for b in blocks:
            x, w = b.points(n, level)
            fx.append(x)
            fw.append(w)
            x, w = b.points(_coarse_count(n), level)
            cx.append(x)
            cw.append(w)
        d = params.d
        self.x, self.rho = _density_weights(params, trunc, self.wh, _cat(fx, d), np.concatenate(fw))
        self.xc, self.rhoc = _density_weights(params, trunc, self.wh, _cat(cx, d), np.concatenate(cw))

    # -- monte carlo ------------------------------------------------------
    def _build_mc(self):
        rng = np.random.default_rng(self.cfg.rng_seed)
        n = self.cfg.mc_samples
        d = self.params.d
        signs = rng.choice(np.array([-1.0, 1.0]), size=n)
        eps = rng.standard_normal((n, d))
        x = signs[:, None] * self.params.mu[None, :] + eps @ self.wh.w_inv
        self.x = x
        self.rho = np.asarray(self.trunc(x), dtype=float)

    @property
    def n_nodes(self) -> int:
        return int(self.x.shape[0])

    def refined(self) -> "WeightedRule | None":
        if self.method == MONTE_CARLO:
            return None
        if self._finer is None:
            nxt = self.level + 1
            nodes = sum(b.size(self.cfg.nodes_per_axis, nxt) for b in self.blocks)
            if nodes > _MAX_NODES or nxt > _MAX_LEVEL:
                return None
            self._finer = WeightedRule(self.params, self.trunc, self.cfg, self.blocks,
                                       self.method, nxt, self.wh)
        return self._finer

    # -- estimates --------------------------------------------------------
    def mass(self) -> Estimate:
        """Survival mass ``int f_params S`` on this rule (refined to tolerance)."""
        if self._mass is not None:
            return self._mass
        rule = self
        while True:
            if rule.method == MONTE_CARLO:
                n = rule.rho.size
                m = float(np.mean(rule.rho))
                se = float(np.std(rule.rho, ddof=1) / math.sqrt(n))
                est = Estimate(m, se, MONTE_CARLO, n)
                break
            m = float(np.sum(rule.rho))
            mc = float(np.sum(rule.rhoc))
            scale = float(np.sum(np.abs(rule.rho)))
            err = float(_err_heuristic(np.array(mc - m), np.array(scale)))
            floor = 50 * _EPS * scale
            est = Estimate(m, max(err, floor), rule.method, rule.n_nodes)
            if err <= max(self.cfg.abs_tol, self.cfg.rel_tol * abs(m)) or err <= floor:
                break
            nxt = rule.refined()
            if nxt is None:
                _budget_warning(est)
                break
            rule = nxt
        self._mass = est
        return est

    def expect(self, g: Callable[[np.ndarray], np.ndarray]) -> Estimate:
        """``E[g]`` under the normalised measure of this rule."""
        rule = self
        while True:
            est, done = rule._expect_once(g)
            if done:
                return est
            nxt = rule.refined()
            if nxt is None:
                _budget_warning(est)
                return est
            rule = nxt

    def _expect_once(self, g) -> tuple[Estimate, bool]:
        if self.x.shape[0] == 0:
            raise DegenerateTruncationError("no quadrature node carries mass")
        if self.method == MONTE_CARLO:
            return self._expect_mc(g), True
        num, snum = _reduce(g, self.x, self.rho)
        numc, _ = _reduce(g, self.xc, self.rhoc)
        den = float(np.sum(self.rho))
        denc = float(np.sum(self.rhoc))
        sden = float(np.sum(np.abs(self.rho)))
        if not den > 0:
            raise DegenerateTruncationError("survival mass vanished on the quadrature rule")
        val = num / den
        err_n = float(np.max(_err_heuristic(numc - num, snum)))
        err_d = float(_err_heuristic(np.array(denc - den), np.array(sden)))
        vmax = float(np.max(np.abs(val))) if np.ndim(val) else abs(float(val))
        trunc_err = (err_n + vmax * err_d) / den
        floor = 50 * _EPS * (float(np.max(snum)) + vmax * sden) / den
        est = Estimate(_scalarise(val), max(trunc_err, floor), self.method, self.n_nodes)
        tol = max(self.cfg.abs_tol, self.cfg.rel_tol * vmax)
        return est, trunc_err <= tol or trunc_err <= floor

    def _expect_mc(self, g) -> Estimate:
        vals = np.asarray(g(self.x), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise QuadratureError("non-finite integrand value")
        s = self.rho.reshape((-1,) + (1,) * (vals.ndim - 1))
        n = self.rho.size
        den = float(np.mean(self.rho))
        if not den > 0:
            raise DegenerateTruncationError("no Monte Carlo sample survived the truncation")
        val = np.mean(s * vals, axis=0) / den
        resid = s * (vals - val)
        se = np.sqrt(np.mean(resid ** 2, axis=0) / n) / den
        return Estimate(_scalarise(val), float(np.max(se)), MONTE_CARLO, n)


class _Adaptive1DRule(WeightedRule):
    """One-dimensional rule whose panels are bisected where the error sits."""

    def __init__(self, params, trunc, cfg, edges: np.ndarray, wh=None):
        self.params = params
        self.trunc = trunc
        self.cfg = cfg
        self.method = ADAPTIVE_1D
        self.wh = wh or whiten(params)
        self.blocks = None
        self.level = 0
        self._finer = None
        self._mass = None
        self.edges = edges
        self._setup(edges)

    def _setup(self, edges):
        n = self.cfg.nodes_per_axis
        m = _coarse_count(n)
        xf, wf = _panel_nodes(edges, n)
        xc, wc = _panel_nodes(edges, m)
        self.n_panels = len(edges) - 1
        self._pf = self._weights(xf, wf)
        self._pc = self._weights(xc, wc)
        self.x = xf.reshape(-1, 1)
        self.rho = self._pf.ravel()
        self.xc = xc.reshape(-1, 1)
        self.rhoc = self._pc.ravel()
        self._xf = xf
        self._xc = xc

    def _weights(self, x, w):
        pts = x.reshape(-1, 1)
        s = self.trunc(pts)
        rho = w.ravel() * s * np.exp(log_mixture_density(self.params, pts, self.wh))
        return rho.reshape(x.shape)

    def _panel_sums(self, g, x, rho):
        vals = np.asarray(g(x.reshape(-1, 1)), dtype=float)
        if vals.shape[0] != x.size:
            raise QuadratureError("integrand must return one value per point")
        if not np.all(np.isfinite(vals)):
            raise QuadratureError("non-finite integrand value")
        vals = vals.reshape(x.shape + vals.shape[1:])
        r = rho.reshape(rho.shape + (1,) * (vals.ndim - 2))
        return np.sum(r * vals, axis=1), np.sum(np.abs(r * vals), axis=1)

    def refined(self):
        return None

    def mass(self):
        if self._mass is None:
            one = self.expect(lambda x: np.ones(x.shape[0]), return_mass=True)
            self._mass = one
        return self._mass

    def expect(self, g, return_mass: bool = False):
        edges = self.edges
        rule = self
        for _ in range(64):
            num_p, snum_p = rule._panel_sums(g, rule._xf, rule._pf)
            numc_p, _ = rule._panel_sums(g, rule._xc, rule._pc)
            den_p = rule._pf.sum(axis=1)
            denc_p = rule._pc.sum(axis=1)
            den = float(den_p.sum())
            if not den > 0:
                raise DegenerateTruncationError("survival mass vanished on the quadrature rule")
            val = num_p.sum(axis=0) / den
            vmax = float(np.max(np.abs(val)))
            en = _err_heuristic(numc_p - num_p, snum_p)
            en = en.reshape(en.shape[0], -1).max(axis=1)
            ed = _err_heuristic(denc_p - den_p, np.abs(rule._pf).sum(axis=1))
            per = (en + vmax * ed) / den
            trunc_err = float(per.sum())
            snum = snum_p.reshape(snum_p.shape[0], -1).max(axis=1).sum()
            floor = 50 * _EPS * (float(snum) + vmax * float(np.abs(den_p).sum())) / den
            est = Estimate(_scalarise(val), max(trunc_err, floor), ADAPTIVE_1D, rule._xf.size)
            tol = max(self.cfg.abs_tol, self.cfg.rel_tol * vmax)
            if return_mass:
                e_den = float(ed.sum())
                f_den = 50 * _EPS * float(np.abs(den_p).sum())
                est = Estimate(den, max(e_den, f_den), ADAPTIVE_1D, rule._xf.size)
                per = ed
                trunc_err = e_den
                floor = f_den
                tol = max(self.cfg.abs_tol, self.cfg.rel_tol * den)
            if trunc_err <= tol or trunc_err <= floor:
                return est
            if rule.n_panels >= self.cfg.max_panels:
                _budget_warning(est)
                return est
            bad = per >= max(0.25 * per.max(), tol / (4 * rule.n_panels))
            mids = 0.5 * (edges[:-1][bad] + edges[1:][bad])
            edges = np.sort(np.concatenate([edges, mids]))
            rule = _Adaptive1DRule(self.params, self.trunc, self.cfg, edges, self.wh)
        _budget_warning(est)
        return est


def _cat(parts: list[np.ndarray], d: int) -> np.ndarray:
    return np.concatenate(parts, axis=0) if parts else np.empty((0, d))


def _scalarise(v):
    v = np.asarray(v, dtype=float)
    return float(v) if v.ndim == 0 else v


def _budget_warning(est: Estimate):
    warnings.warn(f"quadrature panel budget exhausted; error estimate {est.error_estimate:.3g}",
                  RuntimeWarning, stacklevel=3)


# ---------------------------------------------------------------------------
# rule construction
# ---------------------------------------------------------------------------


def _gram_schmidt(vectors: Sequence[np.ndarray], d: int, tol: float = 1e-10) -> list[np.ndarray]:
    basis: list[np.ndarray] = []
    for v in vectors:
        v = np.asarray(v, dtype=float)
        nv = np.linalg.norm(v)
        if nv == 0 or len(basis) == d:
            continue
        u = v.copy()
        for _ in range(2):
            for b in basis:
                u -= (b @ u) * b
        nu = np.linalg.norm(u)
        if nu > tol * nv:
            basis.append(u / nu)
    return basis


def _slope_axes(slopes: list[np.ndarray]) -> tuple[np.ndarray, list[list[float]]]:
    """Split per-direction axis slopes into oblique maxima and aligned poles."""
    if not slopes:
        return np.zeros(0), []
    d = slopes[0].size
    oblique = np.zeros(d)
    aligned: list[list[float]] = [[] for _ in range(d)]
    for s in slopes:
        a = np.abs(s)
        nrm = float(np.linalg.norm(a))
        if nrm == 0:
            continue
        k = int(np.argmax(a))
        if math.sqrt(max(nrm * nrm - a[k] * a[k], 0.0)) <= 1e-12 * nrm:
            aligned[k].append(math.pi / (2 * a[k]))
        else:
            oblique = np.maximum(oblique, a)
    return oblique, aligned


def _h_limit(t: float, oblique: float) -> float:
    h = _GAUSS_WIDTH * t
    if oblique > 0:
        h = min(h, 2.0 / _POLE_RATIO * math.pi / (2 * oblique))
    return h


def _frame_kind(trunc: Truncation, d: int) -> str:
    if d > 3:
        return "mc"
    if d == 1:
        return "cartesian" if trunc.axis_breakpoints(1) is not None else "mc"
    if isinstance(trunc, AnnulusUnion):
        return "polar"
    if isinstance(trunc, (ConstantOne, HalfSpace)):
        return "rotated"
    return "cartesian" if trunc.axis_breakpoints(d) is not None else "mc"


def build_rule(params: MixtureParams, trunc: Truncation, cfg: QuadConfig | None = None,
               directions: Sequence | None = None, poly_degree: int | None = None,
               method: str | None = None, whitener: Whitener | None = None) -> WeightedRule:
    """Node set for expectations under ``f_params * S``.

    Parameters
    ----------
    directions
        Covectors ``v`` such that the integrands to be used depend on ``x``
        only through ``v . x`` (up to a polynomial factor). ``tanh`` slopes
        along them set the panel widths, and in the rotated frame they span
        the axes that need panels.
    poly_degree
        Degree of the polynomial factor. When given, axes orthogonal to all
        declared directions use exact Gauss-Hermite nodes.
    method
        Force ``"MonteCarlo"``; the default picks by dimension and geometry.
    """
    cfg = cfg or QuadConfig()
    d = params.d
    trunc = bind_truncation(trunc, params.sigma)
    wh = whitener or whiten(params)
    dirs = [np.asarray(v, dtype=float).reshape(d) for v in (directions or [])]
    kind = "mc" if method == MONTE_CARLO else _frame_kind(trunc, d)
    if kind == "mc":
        if d <= 3 and method != MONTE_CARLO:
            warnings.warn("truncation geometry is not panel aligned; using Monte Carlo",
                          RuntimeWarning, stacklevel=2)
        return WeightedRule(params, trunc, cfg, None, MONTE_CARLO, wh=wh)
    if kind == "cartesian":
        return _cartesian_rule(params, trunc, cfg, dirs, wh)
    if kind == "rotated":
        return _rotated_rule(params, trunc, cfg, dirs, poly_degree, wh)
    return _polar_rule(params, trunc, cfg, dirs, wh)


def _cartesian_rule(params, trunc, cfg, dirs, wh) -> WeightedRule:
    d = params.d
    R = cfg.window_radius
    mu = params.mu
    sd = np.sqrt(np.diag(params.sigma))
    prec = np.linalg.inv(params.sigma)
    cond = 1.0 / np.sqrt(np.diag(prec))
    breaks = trunc.axis_breakpoints(d)
    slo, shi = trunc.support_box(d)
    oblique, aligned = _slope_axes(dirs)
    if oblique.size == 0:
        oblique = np.zeros(d)
    oblique = np.maximum(oblique, trunc.axis_slopes(d))
    axes = []
    for k in range(d):
        lo = max(-abs(mu[k]) - R * sd[k], slo[k])
        hi = min(abs(mu[k]) + R * sd[k], shi[k])
        if not hi > lo:
            raise DegenerateTruncationError("truncation support lies outside the integration window")
        bk = list(breaks[k]) + [mu[k], -mu[k]]
        pole = min(aligned[k]) if aligned and aligned[k] else None
        axes.append(_Axis(lo, hi, tuple(bk), _h_limit(cond[k], oblique[k]), pole))
    if d == 1:
        ax = axes[0]
        edges = _axis_edges(ax.lo, ax.hi, ax.breaks, ax.h_max, ax.pole, 0)
        return _Adaptive1DRule(params, trunc, cfg, edges, wh)
    block = _Block(axes, lambda z: (z, np.ones(z.shape[0])))
    return WeightedRule(params, trunc, cfg, [block], TENSOR, wh=wh)


def _rotated_rule(params, trunc, cfg, dirs, poly_degree, wh) -> WeightedRule:
    d = params.d
    R = cfg.window_radius
    c = wh.to_white(params.mu)
    cands = []
    off = None
    if isinstance(trunc, HalfSpace):
        nvec = wh.w_inv @ np.asarray(trunc.normal)
        cands.append(nvec)
        off = trunc.offset / np.linalg.norm(nvec)
    cands.append(c)
    cands.extend(wh.w_inv @ v for v in dirs)
    active = _gram_schmidt(cands, d)
    r = len(active)
    if poly_degree is None:
        basis = _gram_schmidt(active + list(np.eye(d)), d)
        r = d
    else:
        basis = _gram_schmidt(active + list(np.eye(d)), d)
    q = np.stack(basis, axis=1)
    m = wh.w_inv @ q
    jac = math.exp(0.5 * wh.log_det_sigma)
    cz = q.T @ c
    slopes = [q.T @ (wh.w_inv @ v) for v in dirs]
    oblique, aligned = _slope_axes(slopes)
    if oblique.size == 0:
        oblique = np.zeros(d)
    n_herm = (poly_degree // 2 + 1) if poly_degree is not None else 0
    axes = []
    for k in range(d):
        if k >= r:
            axes.append(_Axis(0.0, 0.0, hermite=max(1, n_herm)))
            continue
        lo, hi = -abs(cz[k]) - R, abs(cz[k]) + R
        if k == 0 and off is not None:
            lo = max(lo, off)
            if not hi > lo:
                raise DegenerateTruncationError("half-space lies outside the integration window")
        pole = min(aligned[k]) if aligned and aligned[k] else None
        bk = (cz[k], -cz[k])
        axes.append(_Axis(lo, hi, bk, _h_limit(1.0, oblique[k]), pole))
    block = _Block(axes, lambda z: (z @ m.T, np.full(z.shape[0], jac)))
    return WeightedRule(params, trunc, cfg, [block], TENSOR, wh=wh)


def _polar_rule(params, trunc: AnnulusUnion, cfg, dirs, wh) -> WeightedRule:
    d = params.d
    R = cfg.window_radius
    A = np.atleast_2d(trunc.metric)
    ev, V = np.linalg.eigh(A)
    a_half = (V * np.sqrt(ev)) @ V.T
    a_ihalf = (V / np.sqrt(ev)) @ V.T
    det_half = float(np.prod(np.sqrt(ev)))
    cov_u = a_ihalf @ params.sigma @ a_ihalf
    cev = np.linalg.eigvalsh(cov_u)
    t = math.sqrt(cev[0])
    r_win = float(np.linalg.norm(a_ihalf @ params.mu)) + R * math.sqrt(cev[-1])
    kappa = max([float(np.linalg.norm(a_half @ v)) for v in dirs] + [0.0])
    h_r = _h_limit(t, kappa)
    segments = [(l, min(r, r_win)) for l, r in trunc.merged_intervals() if l < r_win]
    if not segments:
        raise DegenerateTruncationError("annulus lies outside the integration window")
    blocks = []
    for l, r in segments:
        edges = _axis_edges(l, r, (), h_r, None, 0)
        for r0, r1 in zip(edges[:-1], edges[1:]):
            h_ang = min(_h_limit(t / r1, kappa * r1), math.pi / 2)
            rax = _Axis(r0, r1, (), r1 - r0 + 1.0)
            if d == 2:
                tax = _Axis(0.0, 2 * math.pi, (), h_ang)
                blocks.append(_Block([rax, tax], _polar_map(a_half, det_half)))
            else:
                pax = _Axis(0.0, math.pi, (), h_ang)
                tax = _Axis(0.0, 2 * math.pi, (), h_ang)
                blocks.append(_Block([rax, pax, tax], _spherical_map(a_half, det_half)))
    return WeightedRule(params, trunc, cfg, blocks, TENSOR, wh=wh)


def _polar_map(a_half, det_half):
    def f(z):
        r, th = z[:, 0], z[:, 1]
        u = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
        return u @ a_half, det_half * r
    return f


def _spherical_map(a_half, det_half):
    def f(z):
        r, ph, th = z[:, 0], z[:, 1], z[:, 2]
        sp = np.sin(ph)
        u = np.stack([r * sp * np.cos(th), r * sp * np.sin(th), r * np.cos(ph)], axis=1)
        return u @ a_half, det_half * r * r * sp
    return f


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------


def survival_mass(params: MixtureParams, trunc: Truncation, cfg: QuadConfig | None = None,
                  method: str | None = None) -> Estimate:
    """``alpha = int f_mu(x) S(x) dx``.

    Warns (``LowMassWarning``) below 1e-6 and raises
    ``DegenerateTruncationError`` when the mass is not resolvable.
    """
    if isinstance(trunc, ConstantOne):
        return Estimate(1.0, 0.0, TENSOR if params.d > 1 else ADAPTIVE_1D, 0)
    rule = build_rule(params, trunc, cfg, directions=(), poly_degree=0, method=method)
    est = rule.mass()
    _check_mass(est)
    return est


def _check_mass(est: Estimate):
    a = float(est.value)
    if not (a > _MIN_MASS) or a <= est.error_estimate:
        raise DegenerateTruncationError(f"survival mass {a:.3g} is not resolvable")
    if a < _LOW_MASS:
        warnings.warn(f"survival mass {a:.3g} < 1e-6; integration noise may dominate",
                      LowMassWarning, stacklevel=3)


def expect(g: Callable[[np.ndarray], np.ndarray], params: MixtureParams, trunc: Truncation,
           cfg: QuadConfig | None = None, directions: Sequence | None = None,
           poly_degree: int | None = None, method: str | None = None) -> Estimate:
    """``E[g(x)]`` for ``x`` drawn from the truncated mixture ``f_params * S / alpha``.

    ``g`` maps an ``(n, d)`` array of points to an array whose leading axis
    has length ``n``; trailing axes (vector or matrix values) are kept.
    See :func:`build_rule` for the ``directions`` / ``poly_degree`` hints.
    """
    rule = build_rule(params, trunc, cfg, directions, poly_degree, method)
    _check_mass(rule.mass())
    return rule.expect(g)


# ---------------------------------------------------------------------------
# plain one-dimensional integration
# ---------------------------------------------------------------------------


def integrate_1d(func: Callable[[np.ndarray], np.ndarray], lo: float, hi: float,
                 breakpoints: Sequence[float] = (), cfg: QuadConfig | None = None,
                 max_width: float | None = None) -> Estimate:
    """Adaptive panel Gauss-Legendre integral of a vectorised ``func`` on ``[lo, hi]``."""
    cfg = cfg or QuadConfig()
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("integrate_1d needs finite limits")
    if hi <= lo:
        return Estimate(0.0, 0.0, ADAPTIVE_1D, 0)
    n = cfg.nodes_per_axis
    m = _coarse_count(n)
    width = max_width or (hi - lo) / 8
    edges = _axis_edges(lo, hi, breakpoints, width, None, 0)
    for _ in range(64):
        xf, wf = _panel_nodes(edges, n)
        xc, wc = _panel_nodes(edges, m)
        ff = np.asarray(func(xf.ravel()), dtype=float).reshape(xf.shape)
        fc = np.asarray(func(xc.ravel()), dtype=float).reshape(xc.shape)
        if not (np.all(np.isfinite(ff)) and np.all(np.isfinite(fc))):
            raise QuadratureError("non-finite integrand value")
        qf = np.sum(ff * wf, axis=1)
        qc = np.sum(fc * wc, axis=1)
        sc = np.sum(np.abs(ff) * wf, axis=1)
        per = _err_heuristic(qf - qc, sc)
        val = float(qf.sum())
        err = float(per.sum())
        floor = 50 * _EPS * float(sc.sum())
        tol = max(cfg.abs_tol, cfg.rel_tol * abs(val))
        est = Estimate(val, max(err, floor), ADAPTIVE_1D, xf.size)
        if err <= tol or err <= floor:
            return est
        if len(edges) - 1 >= cfg.max_panels:
            break
        bad = per >= max(0.25 * per.max(), tol / (4 * (len(edges) - 1)))
        edges = np.sort(np.concatenate([edges, 0.5 * (edges[:-1][bad] + edges[1:][bad])]))
    _budget_warning(est)
    return est


@dataclass(frozen=True)
class Density1D:
    """A one-dimensional probability density on a finite window.

    ``pdf`` need not be normalised; expectations divide by its integral.
    """

    pdf: Callable[[np.ndarray], np.ndarray]
    lo: float
    hi: float
    breakpoints: tuple = ()
    max_width: float | None = None
    label: str = "density"

    @classmethod
    def uniform(cls, a: float, b: float) -> "Density1D":
        return cls(lambda x: np.ones_like(x), float(a), float(b), (), (b - a) / 4, f"uniform[{a},{b}]")

    @classmethod
    def normal(cls, mean: float = 0.0, sd: float = 1.0, radius: float = 12.0) -> "Density1D":
        return cls(lambda x: np.exp(-0.5 * ((x - mean) / sd) ** 2), mean - radius * sd,
                   mean + radius * sd, (mean,), 2 * sd, f"normal({mean},{sd})")

    @classmethod
    def truncated_mixture(cls, params: MixtureParams, trunc: Truncation,
                          radius: float = 12.0) -> "Density1D":
        if params.d != 1:
            raise ValueError("truncated_mixture density needs a one-dimensional model")
        mu = float(params.mu[0])
        sd = math.sqrt(float(params.sigma[0, 0]))
        lo, hi = -abs(mu) - radius * sd, abs(mu) + radius * sd
        slo, shi = trunc.support_box(1)
        lo, hi = max(lo, float(slo[0])), min(hi, float(shi[0]))
        br = tuple(float(b) for b in trunc.axis_breakpoints(1)[0]) + (mu, -mu)
        wh = whiten(params)

        def pdf(x):
            pts = np.asarray(x, dtype=float).reshape(-1, 1)
            return np.exp(log_mixture_density(params, pts, wh)) * trunc(pts)
        return cls(pdf, lo, hi, br, 2 * sd, "truncated mixture")

    @classmethod
    def gaussian_folded(cls, xi: float, sd: float, trunc: Truncation,
                        radius: float = 12.0) -> "Density1D":
        """``N(xi, sd^2)`` reweighted by ``(S(x) + S(-x)) / 2``."""
        br = tuple(float(b) for b in trunc.axis_breakpoints(1)[0])
        br = br + tuple(-b for b in br) + (xi,)

        def pdf(x):
            pts = np.asarray(x, dtype=float).reshape(-1, 1)
            sbar = 0.5 * (trunc(pts) + trunc(-pts))
            return np.exp(-0.5 * ((pts[:, 0] - xi) / sd) ** 2) * sbar
        return cls(pdf, xi - radius * sd, xi + radius * sd, br, 2 * sd, "folded gaussian")

    def breaks(self, extra: Sequence[float] = ()) -> tuple:
        return tuple(self.breakpoints) + tuple(extra)

    def mass(self, cfg: QuadConfig | None = None, extra_breaks: Sequence[float] = ()) -> Estimate:
        return integrate_1d(self.pdf, self.lo, self.hi, self.breaks(extra_breaks), cfg, self.max_width)

    def expect(self, func: Callable[[np.ndarray], np.ndarray], cfg: QuadConfig | None = None,
               extra_breaks: Sequence[float] = ()) -> Estimate:
        z = self.mass(cfg, extra_breaks)
        num = integrate_1d(lambda x: self.pdf(x) * func(x), self.lo, self.hi,
                           self.breaks(extra_breaks), cfg, self.max_width)
        val = num.value / z.value
        err = (num.error_estimate + abs(val) * z.error_estimate) / z.value
        return Estimate(val, err, ADAPTIVE_1D, num.n_nodes)
