import json

import numpy as np
import pytest

from truncem import AnnulusUnion, Box, MixtureParams, SoftLogistic, SoftStep
from truncem.analysis import SADDLE, em_jacobian
from truncem.em import EMContext, MINUS_MU, PLUS_MU
from truncem.landscape import (
    PsiEvaluator1D,
    basin_sample,
    multistart_fixed_points,
    newton_fixed_point,
    resolve_mu_for_fixed_point,
    scan_fixed_points_1d,
    vector_field_2d,
)
from truncem.em import fixed_point_map
from truncem.quad import QuadConfig

from helpers import untruncated

RECT_MU = np.array([2.534, 6.395])
RECT = Box((1.0, -3.0), (2.0, 1.5))


@pytest.fixture(scope="module")
def rectangle_star():
    ctx = EMContext(MixtureParams(RECT_MU, np.eye(2)), RECT, QuadConfig())
    mu_star, res, ctx_star = resolve_mu_for_fixed_point(ctx, [1.0, 0.0])
    return mu_star, res, ctx_star


@pytest.mark.parametrize("trunc", [Box((0.5,), (np.inf,)), Box((-0.3,), (2.0,)),
                                   SoftStep(0, 0.2, 0.1, 0.9), SoftLogistic(0, -0.4, 0.3, 0.0, 1.0)])
def test_scan_finds_three_points(trunc):
    ctx = EMContext(MixtureParams([1.0], 1.0), trunc, QuadConfig())
    fps = scan_fixed_points_1d(ctx, -4.0, 4.0, 4000)
    assert len(fps) == 3
    assert np.allclose(sorted(p[0] for p in fps.points), [-1, 0, 1], atol=1e-8)


def test_batched_psi_matches_scalar():
    ctx = EMContext(MixtureParams([1.2], 0.8), Box((-0.5,), (1.5,)), QuadConfig())
    ev = PsiEvaluator1D(ctx, 5.0)
    lams = np.array([-2.0, -0.3, 0.7, 3.1])
    ref = [fixed_point_map([l], ctx)[0][0] for l in lams]
    assert np.allclose(ev(lams), ref, atol=1e-11)


def test_newton_fixed_point_untruncated():
    lam, res, _ = newton_fixed_point(untruncated([0.8, -0.4]), [0.5, -0.2])
    assert res < 1e-12 and np.allclose(np.abs(lam), [0.8, 0.4], atol=1e-9)


def test_multistart_annulus_three_points():
    ctx = EMContext(MixtureParams([1.5, 0.5], np.eye(2)), AnnulusUnion([(1.0, 3.0)]), QuadConfig())
    fps = multistart_fixed_points(ctx, n_starts=16, threads=4)
    assert len(fps) == 3
    for p in (ctx.mu, -ctx.mu, np.zeros(2)):
        assert fps.contains(p, 1e-6)
    json.loads(fps.to_json())


def test_resolved_mean_makes_saddle(rectangle_star):
    mu_star, res, ctx_star = rectangle_star
    assert res <= 1e-8
    assert np.abs(mu_star - RECT_MU).max() < 5e-3
    rep = em_jacobian([1.0, 0.0], ctx_star)
    assert rep.classification == SADDLE


def test_field_shows_saddle_signature(rectangle_star):
    _, _, ctx = rectangle_star
    rep = em_jacobian([1.0, 0.0], ctx)
    eps = 1e-3
    for k in range(2):
        v = np.real(rep.eigenvectors[:, k])
        p = np.array([1.0, 0.0]) + eps * v
        grid = vector_field_2d(ctx, p, p, (1, 1))
        disp = grid.at(0, 0)
        # displacement follows (J - I) eps v to first order
        expect = (rep.eigenvalues[k].real - 1) * eps * v
        assert np.allclose(disp, expect, atol=2e-2 * eps)


def test_field_csv_shape():
    grid = vector_field_2d(untruncated([1.0, 0.5]), [-1, -1], [1, 1], (3, 4))
    rows = grid.to_csv().strip().splitlines()
    assert rows[0] == "lambda_1,lambda_2,d_1,d_2,flag" and len(rows) == 13


def test_basin_sample_sign_agreement():
    ctx = EMContext(MixtureParams([1.0], 1.0), Box((0.5,), (np.inf,)), QuadConfig())
    rep = basin_sample(ctx, n_inits=20, rng_seed=3, threads=2)
    assert set(rep.tallies) <= {PLUS_MU, MINUS_MU}
    assert rep.sign_agreement_1d() == 1.0


def test_multistart_is_deterministic():
    ctx = EMContext(MixtureParams([1.0, 0.3], np.eye(2)), Box((-1.0, -2.0), (2.0, 1.0)), QuadConfig())
    a = multistart_fixed_points(ctx, n_starts=6, rng_seed=4, threads=3, classify=False)
    b = multistart_fixed_points(ctx, n_starts=6, rng_seed=4, threads=1, classify=False)
    assert a.to_json() == b.to_json()
