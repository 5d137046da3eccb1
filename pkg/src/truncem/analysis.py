"""Derivatives of the moment maps, the EM-map Jacobian and stability classes.

All Jacobians use the standard layout ``J[i, j] = d f_i / d theta_j``:

    d H / d lambda = A Sigma^{-1},  A = E_lam[x x^T] - H H^T
    d b / d lambda = B Sigma^{-1},  B = E_mu[x x^T (1 - t_lam^2)]
    d b / d mu     = C Sigma^{-1},  C = E_mu[x x^T t_lam t_mu] - b m^T

so the EM map ``lambda_t -> H^{-1}(b(lambda_t))`` has Jacobian
``Sigma A^{-1} B Sigma^{-1}``, similar to ``A^{-1} B``. Its spectrum comes
from the symmetric-definite pencil ``(B, A)`` whenever ``A`` is positive
definite.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from .em import EMContext, mu_moments, self_moments

__all__ = [
    "ATTRACTING",
    "REPELLING",
    "SADDLE",
    "MARGINAL",
    "JacobianReport",
    "InvariantViolation",
    "d_self_moment",
    "d_cross_moment_mu",
    "d_cross_moment_lambda",
    "em_jacobian",
    "classify",
    "pd_product_spectrum_check",
    "finite_diff_jacobian",
    "is_spd",
]

ATTRACTING = "Attracting"
REPELLING = "Repelling"
SADDLE = "Saddle"
MARGINAL = "Marginal"

DEFAULT_MARGIN = 1e-6


class InvariantViolation(ArithmeticError):
    """A property the theory guarantees failed numerically."""


def is_spd(m: np.ndarray, tol: float = 0.0) -> bool:
    """Symmetric with smallest eigenvalue above ``-tol`` (and positive when ``tol == 0``)."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    scale = max(float(np.abs(m).max()), np.finfo(float).tiny)
    if np.abs(m - m.T).max() > 1e-10 * scale:
        return False
    lo = float(np.linalg.eigvalsh(0.5 * (m + m.T))[0])
    return lo > 0 if tol == 0 else lo > -tol


def d_self_moment(lam, ctx: EMContext, return_error: bool = False):
    """Jacobian of ``H``: ``(E_lam[x x^T] - H H^T) Sigma^{-1}``.

    ``result @ Sigma`` is the covariance-like matrix ``A``, which is positive
    definite whenever the truncation has positive mass.
    """
    sm = self_moments(ctx, lam)
    out = sm.cov @ ctx.precision
    return (out, sm.cov_err) if return_error else out


def d_cross_moment_lambda(lam, ctx: EMContext, return_error: bool = False):
    """Jacobian of ``b`` in ``lambda``: ``E_mu[x x^T (1 - t_lam^2)] Sigma^{-1}``."""
    mm = mu_moments(ctx, lam, ("B",))
    out = mm.big_b @ ctx.precision
    return (out, mm.err) if return_error else out


def d_cross_moment_mu(lam, ctx: EMContext, return_error: bool = False):
    """Jacobian of ``b`` in the true mean ``mu``.

    ``(E_mu[x x^T t_lam t_mu] - b m^T) Sigma^{-1}`` with ``m = E_mu[x t_mu]``.
    """
    mm = mu_moments(ctx, lam, ("b", "C", "m"))
    c = mm.big_c - np.outer(mm.b, mm.m)
    out = c @ ctx.precision
    err = mm.err * (1.0 + float(np.linalg.norm(mm.b)) + float(np.linalg.norm(mm.m)))
    return (out, err) if return_error else out


@dataclass
class JacobianReport:
    point: np.ndarray
    matrix: np.ndarray
    eigenvalues: np.ndarray  # complex
    spectral_radius: float
    classification: str
    margin: float
    eigenvectors: np.ndarray | None = None
    a_matrix: np.ndarray | None = None
    b_matrix: np.ndarray | None = None
    notes: list = field(default_factory=list)

    @property
    def moduli(self) -> np.ndarray:
        return np.abs(self.eigenvalues)

    def to_dict(self) -> dict:
        return {
            "point": [float(v) for v in self.point],
            "matrix": [[float(v) for v in row] for row in self.matrix],
            "eigenvalues": [[float(e.real), float(e.imag)] for e in self.eigenvalues],
            "spectral_radius": float(self.spectral_radius),
            "classification": self.classification,
            "margin": float(self.margin),
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def classify(moduli, margin: float = DEFAULT_MARGIN) -> str:
    m = np.asarray(moduli, dtype=float)
    if m.max() < 1 - margin:
        return ATTRACTING
    if m.min() > 1 + margin:
        return REPELLING
    if m.min() < 1 - margin and m.max() > 1 + margin:
        return SADDLE
    return MARGINAL


def em_jacobian(gamma, ctx: EMContext, margin: float = DEFAULT_MARGIN) -> JacobianReport:
    """Jacobian of the EM map at ``gamma`` with eigenvalues and a stability class.

    Both moment matrices are taken at ``gamma``, so this is the derivative of
    the EM map only when ``gamma`` is a fixed point.

    The classification margin is ``margin`` plus a first-order bound on the
    eigenvalue perturbation caused by the quadrature errors in ``A`` and ``B``.
    """
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float)).reshape(-1)
    sm = self_moments(ctx, gamma)
    mm = mu_moments(ctx, gamma, ("B",))
    a, b = sm.cov, mm.big_b
    notes = []
    try:
        np.linalg.cholesky(a)
        a_pd = True
    except np.linalg.LinAlgError:
        a_pd = False
        notes.append("self-moment Jacobian is not positive definite")
    try:
        jac = ctx.sigma @ np.linalg.solve(a, b) @ ctx.precision
    except np.linalg.LinAlgError as exc:
        raise InvariantViolation(f"singular self-moment Jacobian at {gamma}") from exc
    if a_pd:
        w, v = scipy.linalg.eigh(b, a)
        evals = w.astype(complex)
        # eigenvectors of J = Sigma A^-1 B Sigma^-1 are Sigma v
        evecs = ctx.sigma @ v
        evecs /= np.linalg.norm(evecs, axis=0, keepdims=True)
        a_min = float(np.linalg.eigvalsh(a)[0])
    else:
        evals, evecs = np.linalg.eig(jac)
        a_min = float(np.min(np.abs(np.linalg.eigvals(a))))
    order = np.argsort(-np.abs(evals), kind="stable")
    evals, evecs = evals[order], evecs[:, order]
    rho = float(np.max(np.abs(evals)))
    cond = float(np.linalg.cond(ctx.sigma)) if ctx.d > 1 else 1.0
    delta = (mm.err + rho * sm.cov_err) / max(a_min, np.finfo(float).tiny) * cond
    total = margin + delta
    return JacobianReport(gamma, jac, evals, rho, classify(np.abs(evals), total), total,
                          evecs, a, b, notes)


def pd_product_spectrum_check(a, b, imag_tol: float = 1e-10) -> bool:
    """True iff ``a @ b`` has eigenvalues with positive real part and negligible imaginary part."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    for name, m in (("a", a), ("b", b)):
        if not is_spd(m):
            raise ValueError(f"{name} is not symmetric positive definite")
    ev = np.linalg.eigvals(a @ b)
    scale = float(np.max(np.abs(ev)))
    return bool(np.all(ev.real > 0) and np.all(np.abs(ev.imag) <= imag_tol * scale))


def finite_diff_jacobian(f: Callable[[np.ndarray], np.ndarray], point, step: float | None = None) -> np.ndarray:
    """Central-difference Jacobian; default step ``1e-5 (1 + ||point||)``."""
    p = np.atleast_1d(np.asarray(point, dtype=float)).reshape(-1)
    h = 1e-5 * (1.0 + float(np.linalg.norm(p))) if step is None else float(step)
    if not h > 0:
        raise ValueError("step must be positive")
    cols = []
    for j in range(p.size):
        e = np.zeros_like(p)
        e[j] = h
        fp = np.atleast_1d(np.asarray(f(p + e), dtype=float))
        fm = np.atleast_1d(np.asarray(f(p - e), dtype=float))
        cols.append((fp - fm) / (2 * h))
    return np.stack(cols, axis=1)
