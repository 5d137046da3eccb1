import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from truncem import AnnulusUnion, Box, ConstantOne, HalfSpace, MixtureParams, SoftRamp, SoftStep, Union
from truncem.model import (
    SoftLogistic,
    bind_truncation,
    log_mixture_density,
    mixture_density,
    truncation_from_config,
    validate_symmetry,
    whiten,
)


def test_params_validate():
    with pytest.raises(ValueError):
        MixtureParams([1.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ValueError):
        MixtureParams([1.0], [[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        MixtureParams([1.0, 0.0], [[1.0, 0.1], [0.0, 1.0]])
    p = MixtureParams([1.0], 2.0)
    assert p.sigma.shape == (1, 1) and p.sigma[0, 0] == 2.0


def test_whitener_roundtrip():
    s = np.array([[2.0, 0.3], [0.3, 0.5]])
    w = whiten(MixtureParams([0.0, 1.0], s))
    assert np.allclose(w.w @ s @ w.w, np.eye(2))
    assert np.allclose(w.w_inv @ w.w_inv, s)
    x = np.array([[0.4, -1.2]])
    assert np.allclose(w.from_white(w.to_white(x)), x)


def test_density_matches_closed_form():
    p = MixtureParams([1.3], 0.7)
    x = np.linspace(-4, 4, 9)
    ref = 0.5 * (np.exp(-(x - 1.3) ** 2 / 1.4) + np.exp(-(x + 1.3) ** 2 / 1.4)) / math.sqrt(2 * math.pi * 0.7)
    assert np.allclose(mixture_density(p, x[:, None]), ref, rtol=1e-14)


def test_log_density_stays_finite_far_out():
    p = MixtureParams([3.0, 0.0], np.eye(2))
    v = log_mixture_density(p, np.array([[400.0, 0.0], [-400.0, 0.0]]))
    assert np.all(np.isfinite(v))
    assert v[0] == pytest.approx(v[1])


def test_box_and_halfspace_values():
    b = Box((0.0, -1.0), (1.0, np.inf))
    assert list(b(np.array([[0.5, 5.0], [1.5, 0.0], [0.0, -1.0]]))) == [1.0, 0.0, 1.0]
    h = HalfSpace((1.0, 1.0), 1.0)
    assert list(h(np.array([[1.0, 0.0], [0.2, 0.2]]))) == [1.0, 0.0]


def test_soft_functions_range():
    x = np.linspace(-5, 5, 101)[:, None]
    for t in (SoftStep(0, 0.0, 0.2, 0.9), SoftRamp(0, -1.0, 1.0, 0.1, 1.0), SoftLogistic(0, 0.0, 0.5, 0.0, 1.0)):
        v = t(x)
        assert v.min() >= 0 and v.max() <= 1
        assert np.all(np.diff(v) >= -1e-15)


def test_union_is_max():
    u = Union((Box((0.0,), (1.0,)), Box((2.0,), (3.0,))))
    assert list(u(np.array([[0.5], [1.5], [2.5]]))) == [1.0, 0.0, 1.0]


def test_config_roundtrip():
    for t in (Box((0.5,), (np.inf,)), AnnulusUnion([(1.0, 3.0)]), SoftRamp(0, -1.0, 1.0, 0.0, 1.0),
              HalfSpace((0.0, 1.0), -0.5), ConstantOne()):
        again = truncation_from_config(t.to_config())
        d = 1 if isinstance(t, (Box, SoftRamp)) else 2
        x = np.random.default_rng(1).normal(scale=3, size=(50, d))
        assert np.array_equal(again(x), t(x))


def test_unknown_truncation_kind():
    with pytest.raises(KeyError):
        truncation_from_config({"kind": "blob"})


def test_symmetry_probe():
    rep = validate_symmetry(AnnulusUnion([(1.0, 3.0)]), 2)
    assert rep.rotation_invariant and rep.even
    rep = validate_symmetry(Box((0.0, 0.0), (1.0, 1.0)), 2)
    assert not rep.rotation_invariant and not rep.even
    rep = validate_symmetry(Box((0.0,), (1.0,), declared_even=True), 1)
    assert rep.contradictions


def test_mahalanobis_annulus_uses_precision():
    sigma = np.diag([4.0, 1.0])
    a = bind_truncation(AnnulusUnion([(0.0, 1.0)]), sigma)
    # (1.9, 0) has Mahalanobis radius 0.95
    assert list(a(np.array([[1.9, 0.0], [0.0, 1.1]]))) == [1.0, 0.0]
    assert validate_symmetry(AnnulusUnion([(0.5, 1.5)]), 2, sigma=sigma).rotation_invariant


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 3), st.floats(-6, 6))
def test_mixture_is_even(mu, s2, x):
    p = MixtureParams([mu], s2)
    assert mixture_density(p, np.array([[x]]))[0] == pytest.approx(mixture_density(p, np.array([[-x]]))[0], rel=1e-13)
