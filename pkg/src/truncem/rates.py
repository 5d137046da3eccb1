"""Empirical contraction, rate identities and FKG correlation checks."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import bisect
from scipy.stats import norm

from .analysis import d_cross_moment_mu, d_self_moment, em_jacobian
from .em import EMContext, EMTrajectory, NOT_CONVERGED
from .quad import Density1D, QuadConfig

__all__ = [
    "RateReport",
    "contraction_profile",
    "bracket_check",
    "denominator_identity_check",
    "numerator_bound_eval",
    "StepFunction",
    "fkg_monotone_check",
    "FkgCheckSpec",
    "fkg_quantitative_check",
    "default_fkg_cutoff",
    "local_rate_check",
    "local_rate_sweep",
    "sweep_to_csv",
]


@dataclass
class RateReport:
    alpha: float
    contraction_factors: list
    spectral_radius_at_limit: float
    fitted_constants: dict
    limit: list | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "contraction_factors": [float(f) for f in self.contraction_factors],
            "spectral_radius_at_limit": self.spectral_radius_at_limit,
            "fitted_constants": self.fitted_constants,
            "limit": self.limit,
            "extra": self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def contraction_profile(traj: EMTrajectory, ctx: EMContext, noise_floor: float = 1e-7) -> RateReport:
    """Per-step distance ratios toward the labelled limit.

    Distances are whitened. Steps starting closer to the limit than
    ``noise_floor * (1 + ||mu||)`` are skipped. The fitted constant is the
    largest ``C`` with ``factor_t <= 1 - C min(alpha^2 min(|lam_t|, |mu|), 1) alpha^4``
    over the recorded steps.
    """
    if len(traj.states) < 1 or traj.limit_label == NOT_CONVERGED or traj.limit_point is None:
        raise ValueError("contraction_profile needs a converged, labelled trajectory")
    limit = np.asarray(traj.limit_point, dtype=float)
    alpha = ctx.alpha
    floor = noise_floor * (1.0 + ctx.white_norm(ctx.mu))
    mu_n = ctx.white_norm(ctx.mu)
    factors, cs = [], []
    lams = traj.lambdas()
    for a, b in zip(lams[:-1], lams[1:]):
        da = ctx.white_norm(a - limit)
        db = ctx.white_norm(b - limit)
        if da <= floor:
            continue
        f = db / da
        factors.append(f)
        scale = min(alpha ** 2 * min(ctx.white_norm(a), mu_n), 1.0) * alpha ** 4
        if scale > 0:
            cs.append((1.0 - f) / scale)
    rep = em_jacobian(limit, ctx)
    fitted = {"global_rate_C": float(min(cs)) if cs else None}
    return RateReport(alpha, factors, rep.spectral_radius, fitted, limit.tolist(),
                      {"classification_at_limit": rep.classification})


def bracket_check(traj: EMTrajectory, mu: float, tol: float = 1e-10) -> bool:
    """Monotone bracketing of 1-D iterates toward ``sign(lam) * mu``.

    Whenever ``0 < lam_t < mu``: ``lam_t < lam_{t+1} < mu``; whenever
    ``lam_t > mu``: ``mu < lam_{t+1} < lam_t``; mirrored for negative
    iterates. Violations smaller than ``tol (1 + |mu|)`` are ignored.
    """
    lams = traj.lambdas()
    if lams.shape[1] != 1:
        raise ValueError("bracket_check needs a one-dimensional trajectory")
    m = abs(float(np.asarray(mu).reshape(-1)[0]))
    slack = tol * (1.0 + m)
    for a, b in zip(lams[:-1, 0], lams[1:, 0]):
        if a == 0:
            continue
        s = 1.0 if a > 0 else -1.0
        a, b = s * a, s * b
        if a < m - slack:
            if not (a - slack < b < m + slack):
                return False
        elif a > m + slack:
            if not (m - slack < b < a + slack):
                return False
    return True


def denominator_identity_check(xi: float, ctx: EMContext, cfg: QuadConfig | None = None) -> dict:
    """Compare ``dH/dlambda`` at ``xi`` with a folded-Gaussian variance.

    Route (i) uses the self-moment derivative ``(E[x^2] - H^2) / sigma^2``
    under the truncated mixture. Route (ii) integrates the variance of ``x``
    under ``N(xi, sigma^2)`` reweighted by ``(S(x) + S(-x)) / 2``, divided by
    ``sigma^2``, with an independent 1-D quadrature.
    """
    if ctx.d != 1:
        raise ValueError("denominator_identity_check is one-dimensional")
    s2 = float(ctx.sigma[0, 0])
    via_moments = float(d_self_moment([xi], ctx)[0, 0])
    dens = Density1D.gaussian_folded(float(xi), math.sqrt(s2), ctx.trunc)
    cfg = cfg or ctx.cfg
    m1 = dens.expect(lambda x: x, cfg).value
    m2 = dens.expect(lambda x: (x - m1) ** 2, cfg).value
    via_fold = m2 / s2
    disc = abs(via_moments - via_fold) / max(abs(via_fold), 1e-300)
    return {"xi": float(xi), "via_moments": via_moments, "via_folded_variance": via_fold,
            "relative_discrepancy": disc}


def numerator_bound_eval(lambda_t: float, ctx: EMContext, n_xi: int = 21) -> dict:
    """``d b_y(lambda_t) / d y`` for true means ``y = xi`` on a grid over ``[lambda_t, mu]``.

    Reports the minimum over the grid (positive by the FKG argument) and its
    ratio to ``alpha^2 tanh^2(sqrt(2 pi) lambda_t alpha)``.
    """
    if ctx.d != 1:
        raise ValueError("numerator_bound_eval is one-dimensional")
    mu = float(ctx.mu[0])
    if not 0 < lambda_t < mu:
        raise ValueError("numerator_bound_eval needs 0 < lambda_t < mu")
    xis = np.linspace(lambda_t, mu, n_xi)
    vals = np.array([float(d_cross_moment_mu([lambda_t], ctx.with_mu([x]))[0, 0]) for x in xis])
    alpha = ctx.alpha
    ref = alpha ** 2 * math.tanh(math.sqrt(2 * math.pi) * lambda_t * alpha) ** 2
    mn = float(vals.min())
    return {"lambda_t": float(lambda_t), "xi": xis.tolist(), "values": vals.tolist(),
            "minimum": mn, "positive": bool(mn > 0), "alpha": alpha,
            "fitted_constant": mn / ref if ref > 0 else None}


# ---------------------------------------------------------------------------
# FKG
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepFunction:
    """Non-decreasing right-continuous step function ``sum_k jumps_k 1{x >= at_k}``."""

    at: tuple
    jumps: tuple
    base: float = 0.0

    def __post_init__(self):
        if len(self.at) != len(self.jumps):
            raise ValueError("at and jumps differ in length")
        if any(j < 0 for j in self.jumps):
            raise ValueError("jumps must be non-negative for an increasing step function")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, float(self.base))
        for a, j in zip(self.at, self.jumps):
            out = out + j * (x >= a)
        return out

    @property
    def breakpoints(self) -> tuple:
        return tuple(self.at)


def _breaks(*fs) -> tuple:
    out = []
    for f in fs:
        out.extend(getattr(f, "breakpoints", ()))
    return tuple(out)


def fkg_monotone_check(f: Callable, g: Callable, distribution: Density1D,
                       cfg: QuadConfig | None = None, return_details: bool = False):
    """``E[f g] >= E[f] E[g] - 1e-12 * scale`` for increasing ``f`` and ``g``."""
    extra = _breaks(f, g)
    ef = distribution.expect(f, cfg, extra).value
    eg = distribution.expect(g, cfg, extra).value
    efg = distribution.expect(lambda x: f(x) * g(x), cfg, extra).value
    scale = distribution.expect(lambda x: np.abs(f(x) * g(x)), cfg, extra).value + abs(ef * eg)
    ok = bool(efg >= ef * eg - 1e-12 * max(scale, 1e-300))
    if return_details:
        return ok, {"E_fg": efg, "E_f": ef, "E_g": eg, "gap": efg - ef * eg, "scale": scale}
    return ok


def default_fkg_cutoff(sigma2: float, alpha: float) -> float:
    """``c`` with ``int_{-c}^{c} exp(-x^2 / (2 sigma^2)) dx = sqrt(2 pi sigma^2) alpha / 2``."""
    if not 0 < alpha <= 2:
        raise ValueError("alpha must lie in (0, 2]")
    sd = math.sqrt(sigma2)
    target = alpha / 2
    hi = sd
    while 2 * norm.cdf(hi / sd) - 1 < target:
        hi *= 2
    return bisect(lambda c: 2 * norm.cdf(c / sd) - 1 - target, 0.0, hi, xtol=1e-15, rtol=1e-15)


@dataclass
class FkgCheckSpec:
    f: Callable
    g: Callable
    c: float
    distribution: Density1D
    df: Callable | None = None
    dg: Callable | None = None
    cfg: QuadConfig | None = None

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("c must be positive")


def _deriv(fn: Callable, x: float) -> float:
    h = 1e-5 * (1.0 + abs(x))
    return float((fn(np.array([x + h])) - fn(np.array([x - h])))[0] / (2 * h))


def _is_even(fn: Callable, c: float) -> bool:
    probe = np.linspace(0.0, 3.0 * c + 1.0, 17)
    a, b = np.asarray(fn(probe), float), np.asarray(fn(-probe), float)
    return bool(np.all(np.abs(a - b) <= 1e-9 * (1.0 + np.abs(a))))


def fkg_quantitative_check(spec: FkgCheckSpec) -> dict:
    """Covariance of ``f, g`` against two tail-variance lower bounds.

    ``RHS_std = 2 f'(c) g'(c) q^2 Var[x | |x| >= c]`` and
    ``RHS_folded = 2 f'(c) g'(c) q^2 Var[|x| | |x| >= c]`` with
    ``q = P(|x| >= c)``. Both comparisons are reported; neither raises.
    """
    dist, c, cfg = spec.distribution, spec.c, spec.cfg
    extra = _breaks(spec.f, spec.g) + (c, -c)
    ef = dist.expect(spec.f, cfg, extra).value
    eg = dist.expect(spec.g, cfg, extra).value
    efg = dist.expect(lambda x: spec.f(x) * spec.g(x), cfg, extra).value
    lhs = efg - ef * eg
    tail = lambda x: (np.abs(x) >= c).astype(float)
    q = dist.expect(tail, cfg, extra).value
    if not q > 0:
        raise ValueError("tail mass P(|x| >= c) is zero")
    m1 = dist.expect(lambda x: x * tail(x), cfg, extra).value / q
    m2 = dist.expect(lambda x: x * x * tail(x), cfg, extra).value / q
    a1 = dist.expect(lambda x: np.abs(x) * tail(x), cfg, extra).value / q
    var_std = m2 - m1 * m1
    var_fold = m2 - a1 * a1
    fp = spec.df(c) if spec.df else _deriv(spec.f, c)
    gp = spec.dg(c) if spec.dg else _deriv(spec.g, c)
    pref = 2.0 * fp * gp * q * q
    rhs_std = pref * var_std
    rhs_fold = pref * var_fold
    slack = 1e-12 * (abs(efg) + abs(ef * eg))
    return {
        "lhs": lhs,
        "rhs_std": rhs_std,
        "rhs_folded": rhs_fold,
        "holds_std": bool(lhs >= rhs_std - slack),
        "holds_folded": bool(lhs >= rhs_fold - slack),
        "q": q,
        "c": c,
        "f_prime_c": fp,
        "g_prime_c": gp,
        "f_even": _is_even(spec.f, c),
        "g_even": _is_even(spec.g, c),
    }


# ---------------------------------------------------------------------------
# local rates
# ---------------------------------------------------------------------------


def local_rate_check(ctx: EMContext) -> dict:
    """Spectral radius of the EM Jacobian at ``+-mu`` and the fitted ``c`` in ``1 - c alpha^6``."""
    plus = em_jacobian(ctx.mu, ctx)
    minus = em_jacobian(-ctx.mu, ctx)
    radius = max(plus.spectral_radius, minus.spectral_radius)
    alpha = ctx.alpha
    return {
        "alpha": alpha,
        "radius_plus": plus.spectral_radius,
        "radius_minus": minus.spectral_radius,
        "radius": radius,
        "attracting": bool(radius < 1),
        "fitted_c": (1.0 - radius) / alpha ** 6,
    }


def local_rate_sweep(contexts: Sequence[EMContext], labels: Sequence | None = None) -> list[dict]:
    rows = []
    for i, c in enumerate(contexts):
        r = local_rate_check(c)
        r["label"] = labels[i] if labels is not None else i
        rows.append(r)
    return rows


def sweep_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "alpha", "radius", "fitted_c"])
    for r in rows:
        w.writerow([r["label"], repr(float(r["alpha"])), repr(float(r["radius"])), repr(float(r["fitted_c"]))])
    return buf.getvalue()
