"""Experiment configuration files (YAML) with line-numbered diagnostics.

Top-level keys
--------------
mu          list of floats (required)
sigma       scalar variance or d x d nested list (default identity)
truncation  mapping with ``kind`` and kind-specific keys (default ``one``)
quad        QuadConfig fields
solver      inner_tol, outer_tol, max_iters
seed        integer seed for random initialisations and multistart
run         init (list or "random"), init_scale, perturb
scan        lo, hi, n
multistart  n_starts, box_scale, resolve_mu_at (optional point)
field       lo, hi, counts
basin       n_inits, init_scale
rates       init, xi (list), lambda_t (list), n_xi, sweep_radii (list)
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from .model import MixtureParams, Truncation, truncation_from_config
from .quad import QuadConfig

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config"]

SECTIONS = {
    "mu": None,
    "sigma": None,
    "truncation": None,
    "quad": {"abs_tol", "rel_tol", "window_radius", "max_panels", "nodes_per_axis", "mc_samples", "rng_seed"},
    "solver": {"inner_tol", "outer_tol", "max_iters"},
    "seed": None,
    "run": {"init", "init_scale", "perturb"},
    "scan": {"lo", "hi", "n"},
    "multistart": {"n_starts", "box_scale", "resolve_mu_at"},
    "field": {"lo", "hi", "counts"},
    "basin": {"n_inits", "init_scale"},
    "rates": {"init", "xi", "lambda_t", "n_xi", "sweep_radii"},
}


class ConfigError(ValueError):
    def __init__(self, msg: str, key: str | None = None, line: int | None = None):
        where = ""
        if key:
            where += f"key '{key}'"
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{where}: {msg}" if where else msg)
        self.key = key
        self.line = line


@dataclass
class ExperimentConfig:
    params: MixtureParams
    trunc: Truncation
    quad: QuadConfig = field(default_factory=QuadConfig)
    inner_tol: float = 1e-10
    outer_tol: float = 1e-8
    max_iters: int = 1000
    seed: int = 0
    sections: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return dict(self.sections.get(name) or {})

    def canonical(self) -> dict:
        """Resolved configuration as plain data (used for hashing and provenance)."""
        return {
            "mu": self.params.mu.tolist(),
            "sigma": self.params.sigma.tolist(),
            "truncation": _jsonable(self.trunc.to_config()),
            "quad": self.quad.to_dict(),
            "solver": {"inner_tol": self.inner_tol, "outer_tol": self.outer_tol, "max_iters": self.max_iters},
            "seed": self.seed,
            "sections": _jsonable(self.sections),
        }

    def sha256(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(obj: Any):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    return obj


def _key_lines(text: str) -> dict:
    """Map dotted key paths to 1-based line numbers."""
    out: dict = {}
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return out

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = f"{prefix}.{k.value}" if prefix else str(k.value)
                out[path] = k.start_mark.line + 1
                walk(v, path)
    if root is not None:
        walk(root, "")
    return out


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                          line=None if mark is None else mark.line + 1) from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    lines = _key_lines(text)

    def fail(key, msg):
        raise ConfigError(msg, key, lines.get(key))

    for k, v in data.items():
        if k not in SECTIONS:
            fail(k, "unknown key")
        allowed = SECTIONS[k]
        if allowed is not None:
            if v is None:
                continue
            if not isinstance(v, dict):
                fail(k, "expected a mapping")
            for sub in v:
                if sub not in allowed:
                    fail(f"{k}.{sub}", "unknown key")
    if "mu" not in data:
        raise ConfigError("missing required key 'mu'")
    try:
        mu = np.atleast_1d(np.asarray(data["mu"], dtype=float))
    except (TypeError, ValueError):
        fail("mu", "expected a list of numbers")
    sigma = data.get("sigma", None)
    try:
        sig = np.eye(mu.size) if sigma is None else np.asarray(sigma, dtype=float)
        params = MixtureParams(mu, sig)
    except (TypeError, ValueError) as exc:
        fail("sigma" if sigma is not None else "mu", str(exc))
    tcfg = data.get("truncation") or {"kind": "one"}
    try:
        trunc = truncation_from_config(tcfg)
        trunc(np.zeros((1, params.d)))
    except (KeyError, TypeError, ValueError) as exc:
        fail("truncation", str(exc).strip("'\""))
    try:
        qraw = data.get("quad") or {}
        # YAML 1.1 reads 1e-13 (no dot) as a string, so coerce explicitly
        ints = {"max_panels", "nodes_per_axis", "mc_samples", "rng_seed"}
        quad = QuadConfig(**{k: int(v) if k in ints else float(v) for k, v in qraw.items()})
    except (TypeError, ValueError) as exc:
        fail("quad", str(exc))
    solver = data.get("solver") or {}
    try:
        inner = float(solver.get("inner_tol", 1e-10))
        outer = float(solver.get("outer_tol", 1e-8))
        iters = int(solver.get("max_iters", 1000))
        if not (inner > 0 and outer > 0 and iters >= 1):
            raise ValueError("tolerances must be positive and max_iters >= 1")
    except (TypeError, ValueError) as exc:
        fail("solver", str(exc))
    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        fail("seed", "expected an integer")
    sections = {k: dict(v or {}) for k, v in data.items() if SECTIONS.get(k) is not None and k not in ("quad", "solver")}
    return ExperimentConfig(params, trunc, quad, inner, outer, iters, seed, sections, data)
