"""Implicit population EM for the truncated symmetric mixture.

With ``t_v(x) = tanh(x^T Sigma^{-1} v)`` the update solves, for ``lambda'``,

    H(lambda') = b(lambda_t),
    b(lambda)  = E_{mu, S}[x t_lambda(x)]       (target moment)
    H(lambda)  = E_{lambda, S}[x t_lambda(x)]   (self moment)

where ``E_{v, S}`` is the expectation under the mixture with mean ``v``
truncated by ``S``. Both sides carry the common factor ``Sigma^{-1}``
cancelled. ``H`` is a diffeomorphism, so ``lambda'`` is found by damped
Newton started at ``lambda_t``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .model import MixtureParams, Truncation, Whitener, bind_truncation, whiten
from .quad import Estimate, QuadConfig, WeightedRule, _check_mass, build_rule

__all__ = [
    "EMContext",
    "EMState",
    "EMTrajectory",
    "SolverError",
    "AccuracyConflict",
    "MuMoments",
    "SelfMoments",
    "mu_moments",
    "self_moments",
    "target_moment",
    "self_moment",
    "solve_self_moment",
    "em_step",
    "fixed_point_map",
    "fixed_point_residual",
    "run_em",
    "label_point",
    "PLUS_MU",
    "MINUS_MU",
    "ZERO",
    "OTHER",
    "NOT_CONVERGED",
]

PLUS_MU = "PlusMu"
MINUS_MU = "MinusMu"
ZERO = "Zero"
OTHER = "Other"
NOT_CONVERGED = "NotConverged"

DEFAULT_INNER_TOL = 1e-10
DEFAULT_OUTER_TOL = 1e-8


class SolverError(RuntimeError):
    """The inner Newton solve failed to reach its tolerance."""


class AccuracyConflict(UserWarning):
    """Quadrature tolerance is too loose for the requested solver tolerance."""


@dataclass(frozen=True, eq=False)
class EMContext:
    """True parameters, truncation and quadrature settings for one experiment."""

    params: MixtureParams
    trunc: Truncation
    cfg: QuadConfig = field(default_factory=QuadConfig)
    method: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "trunc", bind_truncation(self.trunc, self.params.sigma))

    @property
    def d(self) -> int:
        return self.params.d

    @property
    def mu(self) -> np.ndarray:
        return self.params.mu

    @property
    def sigma(self) -> np.ndarray:
        return self.params.sigma

    @cached_property
    def whitener(self) -> Whitener:
        return whiten(self.params)

    @cached_property
    def precision(self) -> np.ndarray:
        p = np.linalg.inv(self.params.sigma)
        return 0.5 * (p + p.T)

    @cached_property
    def alpha_estimate(self) -> Estimate:
        rule = self.rule(self.params.mu, directions=(), poly_degree=0)
        est = rule.mass()
        _check_mass(est)
        return est

    @property
    def alpha(self) -> float:
        """Survival mass of the true mixture."""
        return float(self.alpha_estimate.value)

    @cached_property
    def trust_radius(self) -> float:
        root_norm = math.sqrt(float(np.linalg.eigvalsh(self.params.sigma)[-1]))
        return float(np.linalg.norm(self.params.mu)) + 3.0 * root_norm

    def with_mu(self, mu) -> "EMContext":
        return EMContext(self.params.with_mu(mu), self.trunc, self.cfg, self.method)

    def rule(self, mean, directions=(), poly_degree=2) -> WeightedRule:
        """Node set for the truncated mixture with the given mean."""
        mean = np.asarray(mean, dtype=float).reshape(self.d)
        if np.array_equal(mean, self.params.mu):
            p = self.params
        else:
            p = MixtureParams(mean, self.params.sigma)
        return build_rule(p, self.trunc, self.cfg, directions, poly_degree, self.method,
                          whitener=self.whitener)

    def white_norm(self, v) -> float:
        return float(np.linalg.norm(self.whitener.w @ np.asarray(v, dtype=float)))


def _vec(v, d: int) -> np.ndarray:
    out = np.atleast_1d(np.asarray(v, dtype=float)).reshape(-1)
    if out.size != d:
        raise ValueError(f"expected a vector of length {d}, got {out.size}")
    return out


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SelfMoments:
    """``H = E_lam[x t_lam]`` and ``M2 = E_lam[x x^T]`` under the lambda-mixture."""

    lam: np.ndarray
    h: np.ndarray
    m2: np.ndarray
    h_err: float
    m2_err: float
    method: str = ""

    @property
    def cov(self) -> np.ndarray:
        """``A = M2 - H H^T``; ``A Sigma^{-1}`` is the Jacobian of ``H``."""
        a = self.m2 - np.outer(self.h, self.h)
        return 0.5 * (a + a.T)

    @property
    def cov_err(self) -> float:
        return self.m2_err + 2.0 * float(np.linalg.norm(self.h)) * self.h_err


def self_moments(ctx: EMContext, lam, need_m2: bool = True) -> SelfMoments:
    lam = _vec(lam, ctx.d)
    d = ctx.d
    if not np.any(lam):
        # t_0 = 0: H vanishes identically
        if not need_m2:
            return SelfMoments(lam, np.zeros(d), np.full((d, d), np.nan), 0.0, 0.0, "exact")
        rule = ctx.rule(lam, directions=(), poly_degree=2)
        est = rule.expect(lambda x: np.einsum("ni,nj->nij", x, x))
        return SelfMoments(lam, np.zeros(d), _sym(est.value, d), 0.0, est.error_estimate, est.method)
    v = ctx.precision @ lam
    rule = ctx.rule(lam, directions=(v,), poly_degree=2)

    if need_m2:
        def g(x):
            t = np.tanh(x @ v)
            return np.concatenate([x * t[:, None], np.einsum("ni,nj->nij", x, x).reshape(-1, d * d)], axis=1)
    else:
        def g(x):
            return x * np.tanh(x @ v)[:, None]
    est = rule.expect(g)
    val = np.atleast_1d(est.value)
    h = val[:d]
    m2 = _sym(val[d:], d) if need_m2 else np.full((d, d), np.nan)
    return SelfMoments(lam, h, m2, est.error_estimate, est.error_estimate if need_m2 else 0.0,
                       est.method)


@dataclass(frozen=True)
class MuMoments:
    """Moments under the true mixture used by the target map and its derivatives.

    ``b = E_mu[x t_lam]``, ``B = E_mu[x x^T (1 - t_lam^2)]``,
    ``C = E_mu[x x^T t_lam t_mu]``, ``m = E_mu[x t_mu]``; entries not requested
    are NaN.
    """

    lam: np.ndarray
    b: np.ndarray
    big_b: np.ndarray
    big_c: np.ndarray
    m: np.ndarray
    err: float
    method: str = ""


def mu_moments(ctx: EMContext, lam, want: Sequence[str] = ("b",)) -> MuMoments:
    lam = _vec(lam, ctx.d)
    d = ctx.d
    v = ctx.precision @ lam
    u = ctx.precision @ ctx.mu
    want = set(want)
    dirs = [w for w in (v, u if ({"C", "m"} & want) else None) if w is not None and np.any(w)]
    rule = ctx.rule(ctx.mu, directions=dirs, poly_degree=2)
    slices = {}
    pos = 0
    for key, size in (("b", d), ("B", d * d), ("C", d * d), ("m", d)):
        if key in want:
            slices[key] = slice(pos, pos + size)
            pos += size

    def g(x):
        t = np.tanh(x @ v)
        cols = []
        outer = None
        if {"B", "C"} & want:
            outer = np.einsum("ni,nj->nij", x, x).reshape(-1, d * d)
        if "b" in want:
            cols.append(x * t[:, None])
        if "B" in want:
            cols.append(outer * (1.0 - t * t)[:, None])
        if {"C", "m"} & want:
            tm = np.tanh(x @ u)
            if "C" in want:
                cols.append(outer * (t * tm)[:, None])
            if "m" in want:
                cols.append(x * tm[:, None])
        return np.concatenate(cols, axis=1)

    est = rule.expect(g)
    val = np.atleast_1d(est.value)
    nan_v = np.full(d, np.nan)
    nan_m = np.full((d, d), np.nan)
    return MuMoments(
        lam,
        val[slices["b"]] if "b" in want else nan_v,
        _sym(val[slices["B"]], d) if "B" in want else nan_m,
        val[slices["C"]].reshape(d, d) if "C" in want else nan_m,
        val[slices["m"]] if "m" in want else nan_v,
        est.error_estimate,
        est.method,
    )


def _sym(flat, d: int) -> np.ndarray:
    m = np.asarray(flat, dtype=float).reshape(d, d)
    return 0.5 * (m + m.T)


def target_moment(lambda_t, ctx: EMContext, estimate: bool = False):
    """``b(lambda_t) = E_{mu,S}[x tanh(x^T Sigma^{-1} lambda_t)]``."""
    mm = mu_moments(ctx, lambda_t, ("b",))
    if estimate:
        return Estimate(mm.b, mm.err, mm.method)
    return mm.b


def self_moment(lam, ctx: EMContext, estimate: bool = False):
    """``H(lambda) = E_{lambda,S}[x tanh(x^T Sigma^{-1} lambda)]``."""
    sm = self_moments(ctx, lam, need_m2=False)
    if estimate:
        return Estimate(sm.h, sm.h_err, sm.method)
    return sm.h


# ---------------------------------------------------------------------------
# inner solve
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolveResult:
    lam: np.ndarray
    residual: float
    iterations: int
    target: np.ndarray


def _check_accuracy(ctx: EMContext, inner_tol: float):
    if not inner_tol > 0:
        raise ValueError("inner_tol must be positive")
    if max(ctx.cfg.rel_tol, ctx.cfg.abs_tol) * 100 > inner_tol:
        warnings.warn(
            f"quadrature tolerance (rel {ctx.cfg.rel_tol:g}, abs {ctx.cfg.abs_tol:g}) is not "
            f"100x tighter than inner_tol {inner_tol:g}", AccuracyConflict, stacklevel=3)


def solve_self_moment(target, ctx: EMContext, start, inner_tol: float = DEFAULT_INNER_TOL,
                      max_iter: int = 60) -> SolveResult:
    """Solve ``H(lambda) = target`` by damped Newton from ``start``.

    The Newton direction uses ``J_H^{-1} = Sigma A^{-1}``; steps are capped at
    ``||mu|| + 3 ||Sigma^{1/2}||`` and halved until the residual decreases.
    """
    target = _vec(target, ctx.d)
    lam = _vec(start, ctx.d).copy()
    tol = inner_tol * max(1.0, float(np.linalg.norm(target)))
    sm = self_moments(ctx, lam)
    r = sm.h - target
    rn = float(np.linalg.norm(r))
    for it in range(max_iter):
        if rn <= tol:
            return SolveResult(lam, rn, it, target)
        try:
            step = -ctx.sigma @ np.linalg.solve(sm.cov, r)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular self-moment Jacobian at {lam}") from exc
        sn = float(np.linalg.norm(step))
        if sn > ctx.trust_radius:
            step *= ctx.trust_radius / sn
        t = 1.0
        for _ in range(50):
            cand = lam + t * step
            sm_c = self_moments(ctx, cand)
            r_c = sm_c.h - target
            rn_c = float(np.linalg.norm(r_c))
            if rn_c < rn or rn_c <= tol:
                break
            t *= 0.5
        else:
            raise SolverError(f"Newton stagnated at residual {rn:.3g} (tolerance {tol:.3g})")
        lam, sm, r, rn = cand, sm_c, r_c, rn_c
    if rn <= tol:
        return SolveResult(lam, rn, max_iter, target)
    raise SolverError(f"Newton did not converge in {max_iter} iterations (residual {rn:.3g})")


def em_step(lambda_t, ctx: EMContext, inner_tol: float = DEFAULT_INNER_TOL,
            full: bool = False):
    """One implicit EM update ``lambda_t -> lambda_{t+1}``.

    Returns the new vector, or a :class:`SolveResult` when ``full``.
    """
    _check_accuracy(ctx, inner_tol)
    lambda_t = _vec(lambda_t, ctx.d)
    b = target_moment(lambda_t, ctx)
    res = solve_self_moment(b, ctx, lambda_t, inner_tol)
    return res if full else res.lam


def fixed_point_map(lam, ctx: EMContext) -> tuple[np.ndarray, float]:
    """``psi(lambda) = b(lambda) - H(lambda)`` and its error estimate."""
    mm = mu_moments(ctx, lam, ("b",))
    sm = self_moments(ctx, lam, need_m2=False)
    return mm.b - sm.h, mm.err + sm.h_err


def fixed_point_residual(lam, ctx: EMContext, return_error: bool = False):
    """``||b(lambda) - H(lambda)||``; zero exactly at fixed points of the EM map."""
    psi, err = fixed_point_map(lam, ctx)
    val = float(np.linalg.norm(psi))
    return (val, err) if return_error else val


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EMState:
    lam: np.ndarray
    iter: int
    inner_residual: float
    step_norm: float


@dataclass
class EMTrajectory:
    states: list
    converged: bool
    limit_label: str
    limit_point: np.ndarray | None = None
    final_step: float = float("nan")
    error: str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.states) - 1

    @property
    def final(self) -> np.ndarray:
        return self.states[-1].lam

    def lambdas(self) -> np.ndarray:
        return np.array([s.lam for s in self.states])

    def to_csv(self) -> str:
        d = self.states[0].lam.size
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter"] + [f"lambda_{i + 1}" for i in range(d)] + ["step_norm", "inner_residual"])
        for s in self.states:
            w.writerow([s.iter] + [repr(float(v)) for v in s.lam] + [repr(float(s.step_norm)),
                                                                     repr(float(s.inner_residual))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "limit_label": self.limit_label,
            "limit_point": None if self.limit_point is None else self.limit_point.tolist(),
            "iterations": self.iterations,
            "final_lambda": self.final.tolist(),
            "final_step": self.final_step,
            "final_inner_residual": self.states[-1].inner_residual,
            "error": self.error,
            "meta": self.meta,
            "states": [
                {"iter": s.iter, "lambda": s.lam.tolist(), "step_norm": s.step_norm,
                 "inner_residual": s.inner_residual}
                for s in self.states
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def label_point(lam, ctx: EMContext, tol: float) -> str:
    """Nearest canonical fixed point within ``tol`` (whitened distance), else ``Other``."""
    lam = _vec(lam, ctx.d)
    for label, p in ((PLUS_MU, ctx.mu), (MINUS_MU, -ctx.mu), (ZERO, np.zeros(ctx.d))):
        if ctx.white_norm(lam - p) <= tol:
            return label
    return OTHER


def run_em(lambda_0, ctx: EMContext, outer_tol: float = DEFAULT_OUTER_TOL, max_iters: int = 1000,
           inner_tol: float = DEFAULT_INNER_TOL) -> EMTrajectory:
    """Iterate :func:`em_step` from ``lambda_0``.

    The run stops when the next step would move less than
    ``outer_tol * (1 - rho)``, with ``rho`` the observed ratio of successive
    step lengths, so the final state is within about ``outer_tol`` of the
    limit even under slow contraction. That confirming step is not appended:
    a start that is already a fixed point converges with zero iterations.
    Solver failures end the run and are recorded in ``error``.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    _check_accuracy(ctx, inner_tol)
    lam = _vec(lambda_0, ctx.d).copy()
    states = [EMState(lam, 0, 0.0, 0.0)]
    prev_step = None
    converged = False
    final_step = float("nan")
    error = None
    for t in range(max_iters):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", AccuracyConflict)
                res = em_step(lam, ctx, inner_tol, full=True)
        except Exception as exc:  # recorded, not raised
            error = f"{type(exc).__name__}: {exc}"
            break
        step = float(np.linalg.norm(res.lam - lam))
        rho = 0.0 if not prev_step else min(max(step / prev_step, 0.0), 0.999)
        final_step = step
        if step <= outer_tol * (1.0 - rho):
            converged = True
            break
        lam = res.lam
        states.append(EMState(lam, t + 1, res.residual, step))
        prev_step = step
    if converged:
        label = label_point(lam, ctx, 10 * outer_tol)
        point = {PLUS_MU: ctx.mu, MINUS_MU: -ctx.mu, ZERO: np.zeros(ctx.d)}.get(label, lam)
    else:
        label, point = NOT_CONVERGED, None
    return EMTrajectory(states, converged, label, None if point is None else np.array(point),
                        final_step, error)
