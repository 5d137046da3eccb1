"""Random configuration generators shared by the test modules."""
import warnings

import numpy as np

from truncem import AnnulusUnion, Box, ConstantOne, MixtureParams, SoftLogistic, SoftRamp, SoftStep
from truncem.em import EMContext
from truncem.quad import QuadConfig


def random_spd(rng, d):
    if d == 1:
        return np.array([[rng.uniform(0.5, 2.0)]])
    a = rng.normal(size=(d, d))
    return a @ a.T / d + 0.5 * np.eye(d)


def random_truncation_1d(rng, kind=None):
    kind = kind or rng.choice(["box", "halfline", "window", "step", "ramp", "logistic"])
    if kind == "box":
        lo = rng.uniform(-2, 1)
        return Box((lo,), (lo + rng.uniform(0.8, 3),))
    if kind == "halfline":
        return Box((rng.uniform(-1, 1.5),), (np.inf,))
    if kind == "window":
        return Box((-np.inf,), (rng.uniform(-0.5, 2),))
    if kind == "step":
        return SoftStep(0, rng.uniform(-1, 1), rng.uniform(0, 0.4), rng.uniform(0.6, 1))
    if kind == "ramp":
        a = rng.uniform(-1.5, 0.5)
        return SoftRamp(0, a, a + rng.uniform(0.3, 2), rng.uniform(0, 0.3), 1.0)
    return SoftLogistic(0, rng.uniform(-1, 1), rng.uniform(0.2, 1), rng.uniform(0, 0.3), 1.0)


def random_truncation(rng, d):
    if d == 1:
        return random_truncation_1d(rng)
    kind = rng.choice(["box", "annulus", "step"])
    if kind == "box":
        lo = rng.uniform(-2.5, 0.5, size=d)
        return Box(tuple(lo), tuple(lo + rng.uniform(1.5, 4, size=d)))
    if kind == "annulus":
        r0 = rng.uniform(0, 1)
        return AnnulusUnion([(r0, r0 + rng.uniform(1, 3))])
    return SoftStep(int(rng.integers(d)), rng.uniform(-1, 1), 0.2, 1.0)


def random_context(rng, d, min_alpha=0.05, sigma_identity=False, truncation=None):
    """A context with survival mass at least ``min_alpha`` (rejection sampled)."""
    for _ in range(200):
        mu = rng.uniform(0.6, 2.0) * rng.choice([-1, 1]) if d == 1 else rng.normal(size=d)
        mu = np.atleast_1d(mu)
        if d > 1:
            mu *= rng.uniform(0.8, 2.0) / np.linalg.norm(mu)
        sigma = np.eye(d) if sigma_identity else random_spd(rng, d)
        trunc = truncation if truncation is not None else random_truncation(rng, d)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                ctx = EMContext(MixtureParams(mu, sigma), trunc, QuadConfig())
                if ctx.alpha >= min_alpha:
                    return ctx
            except ValueError:
                continue
    raise RuntimeError("no admissible configuration found")


def untruncated(mu, sigma=None):
    mu = np.atleast_1d(np.asarray(mu, float))
    sigma = np.eye(mu.size) if sigma is None else sigma
    return EMContext(MixtureParams(mu, sigma), ConstantOne(), QuadConfig())
