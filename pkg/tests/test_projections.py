import concurrent.futures

import numpy as np
import pytest

from c3mpc import kernels
from c3mpc.lcs import LCP_TOL
from c3mpc.models import cartpole_lcs
from c3mpc.projections import (
    ComplementaritySet,
    ProjectionError,
    ProjectionTarget,
    default_weight,
    enumerate_projection_oracle,
    project_lcp,
    project_lcp_batch,
    project_miqp,
    project_nested_admm,
)

from .helpers import random_projection_instance


def _scalar_set():
    # (x, lam) with y = x + lam
    return ComplementaritySet(E=[[1.0]], F=[[1.0]], H=np.zeros((1, 0)), c=[0.0])


def test_member_is_fixed_point():
    cset = _scalar_set()
    t = ProjectionTarget([2.0, 0.0], np.eye(2))
    for proj in (project_miqp, project_lcp, project_nested_admm, enumerate_projection_oracle):
        res = proj(t, cset)
        assert np.allclose(res.delta, t.point)
        assert res.objective == pytest.approx(0.0, abs=1e-12)


def test_scalar_force_only():
    cset = ComplementaritySet(E=np.zeros((1, 0)), F=[[1.0]], H=np.zeros((1, 0)), c=[0.0])
    res = project_miqp(ProjectionTarget([1.0], np.eye(1)), cset)
    # y = lam forces lam = 0
    assert np.allclose(res.delta, [0.0]) and res.objective == pytest.approx(1.0)


def test_two_mode_example():
    cset = _scalar_set()
    t = ProjectionTarget([-1.0, 0.0], np.eye(2))
    res = project_miqp(t, cset)
    assert np.allclose(res.delta, [-0.5, 0.5], atol=1e-9)
    assert res.objective == pytest.approx(0.5)
    oracle = enumerate_projection_oracle(t, cset)
    assert oracle.objective == pytest.approx(0.5)


def test_nested_admm_converges_on_two_mode_example():
    cset = _scalar_set()
    t = ProjectionTarget([-1.0, 0.0], np.eye(2))
    res = project_nested_admm(t, cset, inner_iters=50, restore=False)
    assert np.allclose(res.delta, [-0.5, 0.5], atol=1e-3)


def test_nested_admm_rejects_zero_iterations():
    with pytest.raises(ValueError):
        project_nested_admm(ProjectionTarget([0.0, 0.0], np.eye(2)), _scalar_set(), inner_iters=0)


def test_lcp_keeps_state_and_input():
    cset = ComplementaritySet.from_model(cartpole_lcs())
    t = ProjectionTarget([0.0, 0.0, 0.3, -0.1, 5.0, 7.0, 1.5], default_weight(4, 2, 1))
    res = project_lcp(t, cset)
    # gaps are positive at the origin, so forces vanish
    assert np.allclose(res.delta[4:6], 0.0)
    assert np.array_equal(res.delta[[0, 1, 2, 3, 6]], t.point[[0, 1, 2, 3, 6]])


def test_lcp_pressed_into_right_wall():
    cset = ComplementaritySet.from_model(cartpole_lcs())
    # tip at x - l_p theta = 0.5 > d = 0.35
    res = project_lcp(ProjectionTarget([0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], np.eye(7)), cset)
    assert res.delta[4] > 0 and res.delta[5] == 0


def test_lcp_idempotent(rng):
    for _ in range(20):
        cset, t = random_projection_instance(rng)
        try:
            once = project_lcp(t, cset).delta
        except ProjectionError:
            continue
        twice = project_lcp(ProjectionTarget(once, t.U), cset).delta
        assert np.allclose(once, twice, atol=1e-9)


def test_exactness_and_ordering(rng):
    for _ in range(60):
        cset, t = random_projection_instance(rng)
        exact = enumerate_projection_oracle(t, cset)
        miqp = project_miqp(t, cset)
        assert miqp.objective == pytest.approx(exact.objective, rel=1e-7, abs=1e-7)
        assert miqp.residual <= LCP_TOL
        for approx in (project_lcp, project_nested_admm):
            try:
                res = approx(t, cset)
            except ProjectionError:
                continue
            assert res.objective >= exact.objective - 1e-7 * (1 + exact.objective)


def test_all_projections_land_in_set(rng):
    for _ in range(30):
        cset, t = random_projection_instance(rng)
        for proj in (project_miqp, project_lcp, project_nested_admm):
            try:
                res = proj(t, cset)
            except ProjectionError:
                continue
            if proj is project_nested_admm and not res.restored and res.residual > LCP_TOL:
                continue
            lam, y = cset.lam(res.delta), cset.gap(res.delta)
            assert lam.min() >= -LCP_TOL and y.min() >= -LCP_TOL * (1 + np.abs(y).max())


def test_empty_set_reported():
    # y = -1 - lam < 0 always
    cset = ComplementaritySet(E=np.zeros((1, 0)), F=[[-1.0]], H=np.zeros((1, 0)), c=[-1.0])
    t = ProjectionTarget([0.0], np.eye(1))
    with pytest.raises(ProjectionError):
        enumerate_projection_oracle(t, cset)
    with pytest.raises(ProjectionError):
        project_miqp(t, cset)


def test_big_m_warning():
    from c3mpc.projections import BigMTooSmall

    cset = _scalar_set()
    with pytest.warns(BigMTooSmall):
        res = project_miqp(ProjectionTarget([-50.0, 0.0], np.eye(2)), cset, big_m=10.0)
    assert res.big_m_too_small


def test_semidefinite_weight_accepted():
    cset = _scalar_set()
    U = np.diag([1.0, 0.0])
    res = project_miqp(ProjectionTarget([-1.0, 3.0], U), cset)
    # x can stay put with lam = 1 at zero cost
    assert res.objective == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize(
    "a, b, expected",
    [(-1.0, -2.0, (0.0, 0.0)), (2.0, 1.0, (2.0, 0.0)), (1.0, 3.0, (0.0, 3.0)), (1.0, 1.0, (1.0, 0.0)), (-1.0, 2.0, (0.0, 2.0))],
)
def test_snap_rule(a, b, expected):
    assert kernels.snap_pair(a, b) == expected


def test_batch_matches_single(rng):
    cset = ComplementaritySet.from_model(cartpole_lcs())
    pts = rng.normal(size=(10, 7))
    batch = project_lcp_batch(pts, cset)
    for k in range(10):
        assert np.array_equal(batch[k], project_lcp(ProjectionTarget(pts[k], np.eye(7)), cset).delta)


def test_concurrent_projection_identical(rng):
    cset = ComplementaritySet.from_model(cartpole_lcs())
    U = default_weight(4, 2, 1)
    targets = [ProjectionTarget(p, U) for p in rng.normal(size=(16, 7))]
    seq = [project_miqp(t, cset).delta for t in targets]
    with concurrent.futures.ThreadPoolExecutor(4) as pool:
        par = list(pool.map(lambda t: project_miqp(t, cset).delta, targets))
    assert all(np.array_equal(a, b) for a, b in zip(seq, par))


def test_miqp_not_worse_than_lcp_on_cartpole(rng):
    cset = ComplementaritySet.from_model(cartpole_lcs())
    U = default_weight(4, 2, 1)
    for p in rng.normal(size=(30, 7)):
        t = ProjectionTarget(p, U)
        assert project_miqp(t, cset).objective <= project_lcp(t, cset).objective + 1e-9
