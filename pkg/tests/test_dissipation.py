"""Weighted l1 dissipation: values, conjugates, prox, and the contact potential."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from ibvlab.dissipation import DissipationPotential, ProjectionError
from ibvlab.spaces import MetricOperator

vec5 = st.lists(st.floats(-50.0, 50.0, allow_nan=False), min_size=5, max_size=5).map(np.array)


@pytest.fixture
def pot():
    return DissipationPotential(np.array([1.0, 0.5, 2.0, 1.5, 0.75]), h=0.5)


def banded_V(n: int) -> MetricOperator:
    ab = np.zeros((2, n))
    ab[1] = 3.0
    ab[0, 1:] = -1.0
    return MetricOperator.banded_spd(ab)


def test_uniform_weights_fold_mesh():
    pot = DissipationPotential.uniform(4, nu=0.3, h=0.25)
    assert np.allclose(pot.w, 0.075)
    assert pot.rho1 == pytest.approx(0.3)
    assert pot.rho2 == pytest.approx(0.3)


def test_value_is_weighted_l1(pot):
    z = np.array([1.0, -2.0, 0.0, 4.0, -1.0])
    assert pot.R(z) == pytest.approx(float(pot.w @ np.abs(z)))


def test_rejects_bad_weights_and_shapes():
    with pytest.raises(ValueError):
        DissipationPotential(np.array([1.0, -1.0]))
    with pytest.raises(ValueError):
        DissipationPotential(np.array([1.0, 1.0]), h=0.0)
    with pytest.raises(ValueError):
        DissipationPotential(np.array([1.0, 1.0])).R(np.zeros(3))


@given(z=vec5, c=st.floats(0.0, 100.0))
def test_value_is_one_homogeneous(z, c):
    pot = DissipationPotential(np.array([1.0, 0.5, 2.0, 1.5, 0.75]))
    assert pot.R(c * z) == pytest.approx(c * pot.R(z), rel=1e-12, abs=1e-12)


@given(a=vec5, b=vec5)
def test_value_is_subadditive(a, b):
    pot = DissipationPotential(np.array([1.0, 0.5, 2.0, 1.5, 0.75]))
    assert pot.R(a + b) <= pot.R(a) + pot.R(b) + 1e-9


def test_R_eps_adds_viscous_quadratic(pot):
    V = MetricOperator.diagonal(np.array([1.0, 2.0, 0.5, 1.0, 3.0]))
    v = np.array([0.3, -1.0, 2.0, 0.0, -0.2])
    eps = 0.07
    assert pot.R_eps(V, eps, v) == pytest.approx(pot.R(v) + 0.5 * eps * V.quad(v))


def test_projection_diagonal_is_componentwise_clamp(pot):
    V = MetricOperator.diagonal(np.array([2.0, 1.0, 4.0, 1.0, 0.5]))
    zeta = np.array([3.0, -0.2, -5.0, 1.5, 0.9])
    eta, dist = pot.project_box_Vinv(V, zeta)
    assert np.allclose(eta, np.clip(zeta, -pot.w, pot.w))
    r = zeta - eta
    assert dist == pytest.approx(np.sqrt(float(r @ (r / V.diag))))


def test_projection_banded_matches_reference_qp(pot, rng):
    # independent route: box-constrained minimization of the V^{-1} distance
    V = banded_V(5)
    dense = np.column_stack([V.apply(e) for e in np.eye(5)])
    Vinv = np.linalg.inv(dense)
    for _ in range(10):
        zeta = 4.0 * rng.standard_normal(5)
        eta, dist = pot.project_box_Vinv(V, zeta)

        def obj(x):
            r = zeta - x
            return float(r @ Vinv @ r)

        ref = minimize(obj, np.zeros(5), bounds=[(-w, w) for w in pot.w], tol=1e-14)
        assert obj(eta) <= ref.fun + 1e-9
        assert dist == pytest.approx(np.sqrt(max(ref.fun, 0.0)), abs=1e-6)


def test_projection_inside_box_is_identity(pot):
    V = banded_V(5)
    zeta = 0.4 * pot.w
    eta, dist = pot.project_box_Vinv(V, zeta)
    assert np.allclose(eta, zeta)
    assert dist == pytest.approx(0.0, abs=1e-12)


def test_fenchel_young_inequality_random(pot, rng):
    V = MetricOperator.diagonal(np.array([1.0, 2.0, 0.5, 1.0, 3.0]))
    for _ in range(200):
        eps = float(np.exp(rng.uniform(np.log(1e-3), np.log(1.0))))
        v = 3.0 * rng.standard_normal(5)
        zeta = 4.0 * rng.standard_normal(5)
        lhs = pot.R_eps(V, eps, v) + pot.R_eps_star(V, eps, zeta)
        rhs = float(zeta @ v)
        assert lhs >= rhs - 1e-9 * (1.0 + abs(lhs) + abs(rhs))


def test_fenchel_young_equality_at_subdifferential(pot, rng):
    # zeta = eta + eps V v with eta in dR(v) closes the inequality
    V = MetricOperator.diagonal(np.array([1.0, 2.0, 0.5, 1.0, 3.0]))
    for _ in range(100):
        eps = float(np.exp(rng.uniform(np.log(1e-3), np.log(1.0))))
        v = rng.standard_normal(5)
        v[rng.random(5) < 0.3] = 0.0
        eta = np.where(v != 0.0, pot.w * np.sign(v), pot.w * rng.uniform(-1, 1, 5))
        zeta = eta + eps * V.apply(v)
        lhs = pot.R_eps(V, eps, v) + pot.R_eps_star(V, eps, zeta)
        rhs = float(zeta @ v)
        assert lhs == pytest.approx(rhs, abs=1e-9 * (1.0 + abs(rhs)))


def test_contact_potential_is_eps_infimum(pot, rng):
    # closed form against a brute-force scan over the viscosity weight
    V = banded_V(5)
    eps_grid = np.exp(np.linspace(np.log(1e-6), np.log(1e3), 600))
    for _ in range(20):
        v = 2.0 * rng.standard_normal(5)
        zeta = 3.0 * rng.standard_normal(5)
        closed = pot.contact_potential(V, v, zeta)
        scanned = min(pot.R_eps(V, e, v) + pot.R_eps_star(V, e, zeta) for e in eps_grid)
        assert closed <= scanned + 1e-12
        assert closed == pytest.approx(scanned, rel=2e-4)


def test_contact_potential_vanishes_only_inside_box(pot):
    V = MetricOperator.identity(5)
    inside = 0.9 * pot.w
    assert pot.contact_potential(V, np.zeros(5), inside) == pytest.approx(0.0, abs=1e-12)
    outside = 1.5 * pot.w
    v = np.ones(5)
    assert pot.contact_potential(V, v, outside) > pot.R(v)


def test_prox_is_shifted_soft_threshold(pot):
    Q = MetricOperator.diagonal(np.array([2.0, 1.0, 4.0, 2.0, 1.0]))
    center = np.array([1.0, -0.3, 0.6, 2.0, 0.0])
    anchor = np.array([0.2, 0.0, 0.0, -1.0, 0.0])
    got = pot.prox(Q, center, anchor)
    c = center - anchor
    thr = pot.w / Q.diag
    assert np.allclose(got, anchor + np.sign(c) * np.maximum(np.abs(c) - thr, 0.0))


def test_prox_solves_its_own_minimization(pot, rng):
    Q = MetricOperator.diagonal(np.array([2.0, 1.0, 4.0, 2.0, 1.0]))
    center = rng.standard_normal(5)
    anchor = rng.standard_normal(5)
    u = pot.prox(Q, center, anchor)

    def obj(x):
        return 0.5 * Q.quad(x - center) + pot.R(x - anchor)

    base = obj(u)
    for _ in range(50):
        assert base <= obj(u + 0.1 * rng.standard_normal(5)) + 1e-12


def test_prox_requires_diagonal_metric(pot):
    with pytest.raises(ValueError):
        pot.prox(banded_V(5), np.zeros(5), np.zeros(5))


def test_subdiff_membership_accepts_and_rejects(pot):
    v = np.array([1.0, 0.0, -2.0, 0.0, 3.0])
    eta = np.where(v != 0.0, pot.w * np.sign(v), 0.0)
    assert pot.subdiff_membership(eta, v, tol=1e-10)
    # inside the box but not supporting R(v)
    assert not pot.subdiff_membership(0.5 * eta, v, tol=1e-10)
    bad = eta.copy()
    bad[1] = pot.w[1] * 2.0
    assert not pot.subdiff_membership(bad, v, tol=1e-10)


def test_r_variation_telescopes(pot):
    a = np.zeros(5)
    b = np.ones(5)
    c = 3.0 * np.ones(5)
    # monotone moves add up exactly
    assert pot.r_variation([a, b, c]) == pytest.approx(pot.R(c - a))
    # a return trip costs twice
    assert pot.r_variation([a, b, a]) == pytest.approx(2.0 * pot.R(b - a))
    with pytest.raises(ValueError):
        pot.r_variation([])


def test_projection_failure_surfaces(pot):
    V = banded_V(5)
    zeta = np.array([3.0, -0.2, -5.0, 1.5, 0.9])
    with pytest.raises(ProjectionError):
        pot.project_box_Vinv(V, zeta, max_iter=0)
