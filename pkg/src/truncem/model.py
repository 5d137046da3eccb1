"""Mixture parameters, truncation specifications and densities.

The model is the balanced two-component mixture

    f_mu(x) = 0.5 N(x; -mu, Sigma) + 0.5 N(x; mu, Sigma)

observed through a truncation ``S(x)`` taking values in [0, 1]. Indicator
truncations (boxes, half-spaces, Mahalanobis annuli and unions of those) and
soft truncation functions share one interface: they are callables on arrays
of points of shape ``(n, d)`` that also describe where they are
discontinuous, so the quadrature layer can align panels with those
boundaries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np
from scipy.stats import ortho_group

__all__ = [
    "MixtureParams",
    "Whitener",
    "whiten",
    "Truncation",
    "ConstantOne",
    "Box",
    "AnnulusUnion",
    "HalfSpace",
    "Union",
    "SoftStep",
    "SoftRamp",
    "SoftLogistic",
    "SoftFunction",
    "SymmetryReport",
    "mixture_density",
    "log_mixture_density",
    "truncated_density",
    "validate_symmetry",
    "truncation_from_config",
    "bind_truncation",
    "DegenerateTruncationError",
]

_SYM_RTOL = 1e-12


class DegenerateTruncationError(ValueError):
    """The truncation leaves (numerically) no probability mass."""


def _as_points(x, d: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, -1) if x.shape[0] == d else x.reshape(-1, 1)
    if x.shape[1] != d:
        raise ValueError(f"point dimension {x.shape[1]} does not match model dimension {d}")
    return x, single


# ---------------------------------------------------------------------------
# parameters and whitening
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MixtureParams:
    """Location ``mu`` and covariance ``sigma`` of the symmetric mixture.

    ``sigma`` may be given as a full ``(d, d)`` matrix or, in one dimension,
    as a scalar variance.
    """

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float)).copy()
        if mu.ndim != 1 or mu.size < 1:
            raise ValueError("mu must be a non-empty vector")
        d = mu.size
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim == 0:
            sigma = sigma.reshape(1, 1) if d == 1 else sigma * np.eye(d)
        sigma = sigma.copy()
        if sigma.shape != (d, d):
            raise ValueError(f"sigma has shape {sigma.shape}, expected {(d, d)}")
        scale = max(np.abs(sigma).max(), np.finfo(float).tiny)
        if np.abs(sigma - sigma.T).max() > 1e-12 * scale:
            raise ValueError("sigma is not symmetric")
        sigma = 0.5 * (sigma + sigma.T)
        if not np.all(np.isfinite(sigma)) or not np.all(np.isfinite(mu)):
            raise ValueError("non-finite parameters")
        if np.linalg.eigvalsh(sigma)[0] <= 0:
            raise ValueError("sigma is not positive definite")
        mu.flags.writeable = False
        sigma.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def d(self) -> int:
        return self.mu.size

    def with_mu(self, mu) -> "MixtureParams":
        return MixtureParams(mu, self.sigma)

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist()}


@dataclass(frozen=True, eq=False)
class Whitener:
    """Symmetric square roots: ``w = Sigma^{-1/2}`` and ``w_inv = Sigma^{1/2}``."""

    w: np.ndarray
    w_inv: np.ndarray
    log_det_sigma: float

    def to_white(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.w

    def from_white(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) @ self.w_inv


def whiten(params: MixtureParams | np.ndarray) -> Whitener:
    """Whitening transform of the covariance via its eigendecomposition."""
    sigma = params.sigma if isinstance(params, MixtureParams) else np.atleast_2d(params)
    evals, evecs = np.linalg.eigh(sigma)
    if evals[0] <= 0:
        raise ValueError("sigma is not positive definite")
    root = np.sqrt(evals)
    w = (evecs / root) @ evecs.T
    w_inv = (evecs * root) @ evecs.T
    return Whitener(0.5 * (w + w.T), 0.5 * (w_inv + w_inv.T), float(np.sum(np.log(evals))))


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------


def _logcosh(t: np.ndarray) -> np.ndarray:
    a = np.abs(t)
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


def log_mixture_density(params: MixtureParams, x, whitener: Whitener | None = None) -> np.ndarray:
    """Log of ``f_mu`` at points ``x`` of shape ``(n, d)``; overflow free."""
    wh = whitener or whiten(params)
    pts, _ = _as_points(x, params.d)
    y = pts @ wh.w
    c = params.mu @ wh.w
    quad = 0.5 * (np.einsum("ij,ij->i", y, y) + c @ c)
    norm = 0.5 * params.d * math.log(2 * math.pi) + 0.5 * wh.log_det_sigma
    return _logcosh(y @ c) - quad - norm


def mixture_density(params: MixtureParams, x) -> np.ndarray | float:
    """Density ``0.5 N(x; -mu, Sigma) + 0.5 N(x; mu, Sigma)``.

    Returns a float for a single point and an array for a stack of points.
    """
    pts, single = _as_points(x, params.d)
    out = np.exp(log_mixture_density(params, pts))
    return float(out[0]) if single else out


def truncated_density(params: MixtureParams, trunc: "Truncation", x, alpha: float):
    """``mixture_density(x) * S(x) / alpha`` with ``alpha`` the survival mass."""
    if not alpha > 0:
        raise DegenerateTruncationError(f"survival mass must be positive, got {alpha}")
    pts, single = _as_points(x, params.d)
    out = np.exp(log_mixture_density(params, pts)) * trunc(pts) / alpha
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# truncations
# ---------------------------------------------------------------------------


def _inf_to_json(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


class Truncation:
    """Base class for truncation sets and functions.

    Subclasses implement ``_eval`` on a ``(n, d)`` array and may override
    ``axis_breakpoints`` / ``support_box`` to expose their geometry.
    """

    declared_even: bool = False
    declared_rotation_invariant: bool = False
    kind: str = "abstract"

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        return self._eval(x)

    def _eval(self, x: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def axis_breakpoints(self, d: int) -> list[np.ndarray] | None:
        """Per-axis discontinuity locations in data coordinates.

        ``None`` means the truncation is not axis aligned.
        """
        return [np.empty(0) for _ in range(d)]

    def support_box(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        return np.full(d, -np.inf), np.full(d, np.inf)

    def axis_slopes(self, d: int) -> np.ndarray:
        """Per-axis steepness ``a`` of smooth transitions, as in ``tanh(a x)``."""
        return np.zeros(d)

    def flags(self) -> dict:
        return {"even": self.declared_even, "rotation_invariant": self.declared_rotation_invariant}

    def to_config(self) -> dict:
        raise TypeError(f"{type(self).__name__} cannot be serialised")


@dataclass(frozen=True)
class ConstantOne(Truncation):
    """No truncation, ``S = 1`` everywhere."""

    declared_even: bool = True
    declared_rotation_invariant: bool = True
    kind: str = field(default="one", init=False)

    def _eval(self, x):
        return np.ones(x.shape[0])

    def to_config(self):
        return {"kind": "one", "flags": self.flags()}


@dataclass(frozen=True)
class Box(Truncation):
    """Product of closed intervals ``[lower_k, upper_k]``; edges may be infinite."""

    lower: tuple
    upper: tuple
    declared_even: bool = False
    declared_rotation_invariant: bool = False
    kind: str = field(default="box", init=False)

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi):
            raise ValueError("box bounds differ in length")
        if any(not a < b for a, b in zip(lo, hi)):
            raise ValueError("box requires lower < upper on every axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_intervals(cls, intervals, **flags) -> "Box":
        iv = [(float(a), float(b)) for a, b in intervals]
        return cls(tuple(a for a, _ in iv), tuple(b for _, b in iv), **flags)

    def _eval(self, x):
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return np.all((x >= lo) & (x <= hi), axis=1).astype(float)

    def axis_breakpoints(self, d):
        self._check_dim(d)
        return [np.array([v for v in (a, b) if math.isfinite(v)]) for a, b in zip(self.lower, self.upper)]

    def support_box(self, d):
        self._check_dim(d)
        return np.array(self.lower), np.array(self.upper)

    def _check_dim(self, d):
        if len(self.lower) != d:
            raise ValueError(f"box has {len(self.lower)} axes, model has {d}")

    def to_config(self):
        return {
            "kind": "box",
            "intervals": [[_inf_to_json(a), _inf_to_json(b)] for a, b in zip(self.lower, self.upper)],
            "flags": self.flags(),
        }


@dataclass(frozen=True)
class AnnulusUnion(Truncation):
    """Union of shells ``l_i <= ||x||_A <= r_i`` with ``||x||_A = sqrt(x^T A^{-1} x)``.

    ``metric`` is the matrix ``A``; ``None`` means "the model covariance" and
    is resolved by :meth:`bind`. Unbound annuli evaluate with the identity.
    """

    intervals: tuple
    metric: Any = None
    declared_even: bool = True
    declared_rotation_invariant: bool = True
    kind: str = field(default="annulus", init=False)

    def __post_init__(self):
        iv = tuple((float(l), float(r)) for l, r in self.intervals)
        if not iv:
            raise ValueError("annulus union needs at least one interval")
        for l, r in iv:
            if not (0 <= l < r):
                raise ValueError(f"annulus interval ({l}, {r}) violates 0 <= l < r")
        object.__setattr__(self, "intervals", iv)
        if self.metric is not None:
            m = np.atleast_2d(np.asarray(self.metric, dtype=float)).copy()
            m.flags.writeable = False
            object.__setattr__(self, "metric", m)

    def bind(self, sigma) -> "AnnulusUnion":
        return self if self.metric is not None else replace(self, metric=np.atleast_2d(sigma))

    def radius(self, x: np.ndarray) -> np.ndarray:
        if self.metric is None:
            return np.sqrt(np.einsum("ij,ij->i", x, x))
        sol = np.linalg.solve(self.metric, x.T).T
        return np.sqrt(np.maximum(np.einsum("ij,ij->i", x, sol), 0.0))

    def merged_intervals(self) -> list[tuple[float, float]]:
        out: list[list[float]] = []
        for l, r in sorted(self.intervals):
            if out and l <= out[-1][1]:
                out[-1][1] = max(out[-1][1], r)
            else:
                out.append([l, r])
        return [(a, b) for a, b in out]

    def _eval(self, x):
        rad = self.radius(x)
        hit = np.zeros(x.shape[0], dtype=bool)
        for l, r in self.intervals:
            hit |= (rad >= l) & (rad <= r)
        return hit.astype(float)

    def axis_breakpoints(self, d):
        if d != 1:
            return None
        scale = 1.0 if self.metric is None else math.sqrt(float(self.metric[0, 0]))
        pts = []
        for l, r in self.intervals:
            for v in (l, r):
                if math.isfinite(v):
                    pts.extend([-v * scale, v * scale])
        return [np.unique(np.array(pts))]

    def support_box(self, d):
        rmax = max(r for _, r in self.intervals)
        if not math.isfinite(rmax):
            return super().support_box(d)
        diag = np.ones(d) if self.metric is None else np.sqrt(np.diag(self.metric))
        return -rmax * diag, rmax * diag

    def to_config(self):
        cfg = {
            "kind": "annulus",
            "intervals": [[_inf_to_json(l), _inf_to_json(r)] for l, r in self.intervals],
            "flags": self.flags(),
        }
        if self.metric is not None:
            cfg["metric"] = self.metric.tolist()
        return cfg


@dataclass(frozen=True)
class HalfSpace(Truncation):
    """Indicator of ``normal . x >= offset``."""

    normal: tuple
    offset: float = 0.0
    declared_even: bool = False
    declared_rotation_invariant: bool = False
    kind: str = field(default="halfspace", init=False)

    def __post_init__(self):
        n = tuple(float(v) for v in np.atleast_1d(self.normal))
        if not any(n):
            raise ValueError("half-space normal must be non-zero")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    def _eval(self, x):
        return (x @ np.asarray(self.normal) >= self.offset).astype(float)

    def axis_breakpoints(self, d):
        n = np.asarray(self.normal)
        nz = np.flatnonzero(n)
        if len(nz) != 1:
            return None
        out = [np.empty(0) for _ in range(d)]
        out[nz[0]] = np.array([self.offset / n[nz[0]]])
        return out

    def support_box(self, d):
        lo, hi = np.full(d, -np.inf), np.full(d, np.inf)
        n = np.asarray(self.normal)
        nz = np.flatnonzero(n)
        if len(nz) == 1:
            k = nz[0]
            if n[k] > 0:
                lo[k] = self.offset / n[k]
            else:
                hi[k] = self.offset / n[k]
        return lo, hi

    def to_config(self):
        return {"kind": "halfspace", "normal": list(self.normal), "offset": self.offset, "flags": self.flags()}


@dataclass(frozen=True)
class Union(Truncation):
    """Pointwise maximum of its parts (set union for indicators)."""

    parts: tuple
    declared_even: bool = False
    declared_rotation_invariant: bool = False
    kind: str = field(default="union", init=False)

    def __post_init__(self):
        if not self.parts:
            raise ValueError("union needs at least one part")
        object.__setattr__(self, "parts", tuple(self.parts))

    def _eval(self, x):
        return np.max(np.stack([p(x) for p in self.parts]), axis=0)

    def axis_breakpoints(self, d):
        per = [p.axis_breakpoints(d) for p in self.parts]
        if any(b is None for b in per):
            return None
        return [np.unique(np.concatenate([b[k] for b in per])) for k in range(d)]

    def support_box(self, d):
        boxes = [p.support_box(d) for p in self.parts]
        return np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0)

    def axis_slopes(self, d):
        return np.max([p.axis_slopes(d) for p in self.parts], axis=0)

    def to_config(self):
        return {"kind": "union", "parts": [p.to_config() for p in self.parts], "flags": self.flags()}


@dataclass(frozen=True)
class SoftStep(Truncation):
    """``low`` below ``at`` on one axis and ``high`` above it."""

    axis: int = 0
    at: float = 0.0
    low: float = 0.2
    high: float = 1.0
    declared_even: bool = False
    declared_rotation_invariant: bool = False
    kind: str = field(default="soft_step", init=False)

    def __post_init__(self):
        if not (0 <= self.low <= 1 and 0 <= self.high <= 1):
            raise ValueError("soft step levels must lie in [0, 1]")

    def _eval(self, x):
        return np.where(x[:, self.axis] > self.at, self.high, self.low)

    def axis_breakpoints(self, d):
        out = [np.empty(0) for _ in range(d)]
        out[self.axis] = np.array([self.at])
        return out

    def to_config(self):
        return {"kind": "soft_step", "axis": self.axis, "at": self.at, "low": self.low,
                "high": self.high, "flags": self.flags()}


@dataclass(frozen=True)
class SoftRamp(Truncation):
    """Piecewise-linear ramp from ``low`` at ``start`` to ``high`` at ``end``."""

    axis: int = 0
    start: float = -1.0
    end: float = 1.0
    low: float = 0.0
    high: float = 1.0
    declared_even: bool = False
    declared_rotation_invariant: bool = False
    kind: str = field(default="soft_ramp", init=False)

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError("ramp requires start < end")
        if not (0 <= self.low <= 1 and 0 <= self.high <= 1):
            raise ValueError("ramp levels must lie in [0, 1]")

    def _eval(self, x):
        t = np.clip((x[:, self.axis] - self.start) / (self.end - self.start), 0.0, 1.0)
        return self.low + (self.high - self.low) * t

    def axis_breakpoints(self, d):
        out = [np.empty(0) for _ in range(d)]
        out[self.axis] = np.array([self.start, self.end])
        return out

    def to_config(self):
        return {"kind": "soft_ramp", "axis": self.axis, "start": self.start, "end": self.end,
                "low": self.low, "high": self.high, "flags": self.flags()}


@dataclass(frozen=True)
class SoftLogistic(Truncation):
    """Smooth sigmoid ``low + (high - low) / (1 + exp(-(x_axis - center) / scale))``."""

    axis: int = 0
    center: float = 0.0
    scale: float = 1.0
    low: float = 0.0
    high: float = 1.0
    declared_even: bool = False
    declared_rotation_invariant: bool = False
    kind: str = field(default="soft_logistic", init=False)

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("logistic scale must be positive")
        if not (0 <= self.low <= 1 and 0 <= self.high <= 1):
            raise ValueError("logistic levels must lie in [0, 1]")

    def _eval(self, x):
        z = (x[:, self.axis] - self.center) / self.scale
        return self.low + (self.high - self.low) * 0.5 * (1.0 + np.tanh(0.5 * z))

    def axis_breakpoints(self, d):
        out = [np.empty(0) for _ in range(d)]
        out[self.axis] = np.array([self.center])
        return out

    def axis_slopes(self, d):
        out = np.zeros(d)
        out[self.axis] = 0.5 / self.scale
        return out

    def to_config(self):
        return {"kind": "soft_logistic", "axis": self.axis, "center": self.center,
                "scale": self.scale, "low": self.low, "high": self.high, "flags": self.flags()}


@dataclass(frozen=True)
class SoftFunction(Truncation):
    """Arbitrary vectorised evaluator ``(n, d) -> [0, 1]^n``.

    ``breakpoints`` lists, per axis, the coordinates where the function is
    discontinuous (or has kinks). Without them, quadrature accuracy is not
    guaranteed.
    """

    func: Callable[[np.ndarray], np.ndarray] = None
    breakpoints: tuple | None = None
    declared_even: bool = False
    declared_rotation_invariant: bool = False
    kind: str = field(default="soft", init=False)

    def _eval(self, x):
        return np.asarray(self.func(x), dtype=float).reshape(x.shape[0])

    def axis_breakpoints(self, d):
        if self.breakpoints is None:
            return [np.empty(0) for _ in range(d)]
        return [np.asarray(b, dtype=float) for b in self.breakpoints]


def bind_truncation(trunc: Truncation, sigma) -> Truncation:
    """Resolve annuli measured in "the model covariance" against ``sigma``."""
    if isinstance(trunc, AnnulusUnion):
        return trunc.bind(sigma)
    if isinstance(trunc, Union):
        return replace(trunc, parts=tuple(bind_truncation(p, sigma) for p in trunc.parts))
    return trunc


# ---------------------------------------------------------------------------
# config round-trip
# ---------------------------------------------------------------------------


def _num(v) -> float:
    if isinstance(v, str):
        s = v.strip().lower()
        if s in ("inf", "+inf", ".inf", "infinity"):
            return math.inf
        if s in ("-inf", "-.inf", "-infinity"):
            return -math.inf
    return float(v)


_SOFT_KEYS = {
    "soft_step": (SoftStep, ("axis", "at", "low", "high")),
    "soft_ramp": (SoftRamp, ("axis", "start", "end", "low", "high")),
    "soft_logistic": (SoftLogistic, ("axis", "center", "scale", "low", "high")),
}


def truncation_from_config(cfg: dict) -> Truncation:
    """Build a truncation from its config mapping (inverse of ``to_config``)."""
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise KeyError("truncation config needs a 'kind' key")
    kind = cfg["kind"]
    flags = cfg.get("flags") or {}
    fl = {}
    if "even" in flags:
        fl["declared_even"] = bool(flags["even"])
    if "rotation_invariant" in flags:
        fl["declared_rotation_invariant"] = bool(flags["rotation_invariant"])
    if kind == "one":
        return ConstantOne(**fl)
    if kind == "box":
        if "intervals" in cfg:
            return Box.from_intervals([(_num(a), _num(b)) for a, b in cfg["intervals"]], **fl)
        if "lower" not in cfg or "upper" not in cfg:
            raise KeyError("box needs 'intervals' or both 'lower' and 'upper'")
        return Box(tuple(_num(v) for v in cfg["lower"]), tuple(_num(v) for v in cfg["upper"]), **fl)
    if kind == "annulus":
        metric = cfg.get("metric")
        return AnnulusUnion(tuple((_num(a), _num(b)) for a, b in cfg["intervals"]),
                            metric=None if metric is None else np.asarray(metric, float), **fl)
    if kind == "halfspace":
        return HalfSpace(tuple(_num(v) for v in cfg["normal"]), _num(cfg.get("offset", 0.0)), **fl)
    if kind == "union":
        return Union(tuple(truncation_from_config(p) for p in cfg["parts"]), **fl)
    if kind in _SOFT_KEYS:
        cls, keys = _SOFT_KEYS[kind]
        kw = {k: (int(cfg[k]) if k == "axis" else _num(cfg[k])) for k in keys if k in cfg}
        unknown = set(cfg) - set(keys) - {"kind", "flags"}
        if unknown:
            raise KeyError(f"unknown keys for {kind}: {sorted(unknown)}")
        return cls(**kw, **fl)
    raise KeyError(f"unknown truncation kind {kind!r}")


# ---------------------------------------------------------------------------
# symmetry probing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SymmetryReport:
    max_rotation_deviation: float
    max_reflection_deviation: float
    rotation_invariant: bool
    even: bool
    contradictions: tuple

    def to_dict(self) -> dict:
        return {
            "max_rotation_deviation": self.max_rotation_deviation,
            "max_reflection_deviation": self.max_reflection_deviation,
            "rotation_invariant": self.rotation_invariant,
            "even": self.even,
            "contradictions": list(self.contradictions),
        }


def validate_symmetry(trunc: Truncation, d: int, n_probes: int = 256, rng_seed: int = 0,
                      sigma=None, probe_scale: float = 3.0) -> SymmetryReport:
    """Probe ``S`` for evenness and rotation invariance.

    Rotations act in whitened coordinates when ``sigma`` is given, i.e. the
    probe compares ``S(Sigma^{1/2} Q y)`` with ``S(Sigma^{1/2} y)``.
    """
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    rng = np.random.default_rng(rng_seed)
    if sigma is not None:
        trunc = bind_truncation(trunc, sigma)
    root = np.eye(d) if sigma is None else whiten(np.atleast_2d(sigma)).w_inv
    y = rng.normal(scale=probe_scale, size=(n_probes, d))
    base = _probe(trunc, y @ root)
    if d == 1:
        rotated = _probe(trunc, -y @ root)
    else:
        qs = ortho_group.rvs(d, size=n_probes, random_state=rng)
        qs = qs.reshape(n_probes, d, d)
        rotated = _probe(trunc, np.einsum("nij,nj->ni", qs, y) @ root)
    reflected = _probe(trunc, -y @ root)
    rot_dev = float(np.max(np.abs(rotated - base)))
    ref_dev = float(np.max(np.abs(reflected - base)))
    rot_ok = rot_dev <= _SYM_RTOL
    even_ok = ref_dev <= _SYM_RTOL
    contra = []
    if trunc.declared_rotation_invariant and not rot_ok:
        contra.append("declared rotation invariant but probes disagree")
    if trunc.declared_even and not even_ok:
        contra.append("declared even but probes disagree")
    return SymmetryReport(rot_dev, ref_dev, rot_ok, even_ok, tuple(contra))


def _probe(trunc: Truncation, pts: Sequence) -> np.ndarray:
    vals = trunc(np.asarray(pts, dtype=float))
    if np.any(vals < 0) or np.any(vals > 1) or not np.all(np.isfinite(vals)):
        raise ValueError("truncation values must lie in [0, 1]")
    return vals
