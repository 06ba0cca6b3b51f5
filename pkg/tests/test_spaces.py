"""Metric operators, discrete gradients, and the norm family."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ibvlab.spaces import (
    BoundaryCondition,
    DiscreteSpace,
    MetricOperator,
    NormFamily,
    NotSPDError,
    dirichlet_laplacian,
    lumped_mass,
)

finite_vecs = arrays(
    np.float64,
    st.integers(min_value=1, max_value=12).map(lambda n: (n,)),
    elements=st.floats(-1e6, 1e6, allow_nan=False),
)


def dense_of(op: MetricOperator, n: int) -> np.ndarray:
    return np.column_stack([op.apply(e) for e in np.eye(n)])


def test_grad_matches_hand_differences():
    space = DiscreteSpace(3, 0.5)
    g = space.grad(np.array([1.0, 3.0, 2.0]))
    # ghost zeros on both ends, then divide by h
    assert np.allclose(g, np.array([1.0, 2.0, -1.0, -2.0]) / 0.5)


def test_grad_without_ghosts_is_interior_differences():
    space = DiscreteSpace(4, 1.0, bc=BoundaryCondition.NONE)
    g = space.grad(np.array([0.0, 1.0, 4.0, 4.0]))
    assert np.allclose(g, [1.0, 3.0, 0.0])


def test_grad_batch_matches_rowwise_grad(rng):
    space = DiscreteSpace(6, 0.3)
    X = rng.standard_normal((5, 6))
    G = space.grad_batch(X)
    for row_x, row_g in zip(X, G):
        assert np.allclose(row_g, space.grad(row_x))


def test_space_rejects_bad_shape_and_params():
    with pytest.raises(ValueError):
        DiscreteSpace(0, 1.0)
    with pytest.raises(ValueError):
        DiscreteSpace(3, 0.0)
    with pytest.raises(ValueError):
        DiscreteSpace(3, 1.0).grad(np.zeros(4))


def test_diagonal_and_identity_agree():
    a = MetricOperator.identity(4, scale=2.0)
    b = MetricOperator.diagonal(np.full(4, 2.0))
    x = np.array([1.0, -2.0, 0.5, 3.0])
    assert np.allclose(a.apply(x), b.apply(x))
    assert a.quad(x) == pytest.approx(b.quad(x))
    assert a.norm(x) == pytest.approx(np.sqrt(2.0) * np.linalg.norm(x))


def test_dense_spd_round_trip(rng):
    B = rng.standard_normal((5, 5))
    A = B @ B.T + 5.0 * np.eye(5)
    op = MetricOperator.dense_spd(A)
    x = rng.standard_normal(5)
    assert np.allclose(op.apply(x), A @ x)
    assert np.allclose(op.solve(A @ x), x, atol=1e-10)
    assert op.quad(x) == pytest.approx(x @ A @ x)
    assert op.inv_quad(x) == pytest.approx(x @ np.linalg.solve(A, x))


def test_dense_spd_rejects_asymmetric_and_indefinite():
    with pytest.raises(NotSPDError):
        MetricOperator.dense_spd(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(NotSPDError):
        MetricOperator.dense_spd(np.array([[1.0, 0.0], [0.0, -1.0]]))


def test_banded_spd_matches_dense(rng):
    # tridiagonal SPD in upper diagonal-ordered form
    n = 7
    main = np.full(n, 4.0)
    off = np.full(n, -1.0)
    ab = np.vstack([off, main])
    op = MetricOperator.banded_spd(ab)
    A = np.diag(main) + np.diag(off[1:], 1) + np.diag(off[1:], -1)
    x = rng.standard_normal(n)
    assert np.allclose(op.apply(x), A @ x)
    assert np.allclose(op.solve(x), np.linalg.solve(A, x))


def test_spectral_bounds_bracket_true_spectrum(rng):
    B = rng.standard_normal((6, 6))
    A = B @ B.T + 3.0 * np.eye(6)
    op = MetricOperator.dense_spd(A)
    eigs = np.linalg.eigvalsh(A)
    assert op.norm_bound() >= eigs[-1] - 1e-10
    assert 0.0 < op.min_eig() <= eigs[0] + 1e-10


@given(x=finite_vecs)
def test_identity_quad_is_euclidean(x):
    op = MetricOperator.identity(x.size)
    assert op.quad(x) == pytest.approx(float(x @ x), rel=1e-12, abs=1e-12)


@given(x=finite_vecs, scale=st.floats(0.1, 10.0))
def test_quad_respects_certified_spectral_bracket(x, scale):
    d = scale * (1.0 + np.arange(x.size, dtype=float))
    op = MetricOperator.diagonal(d)
    q = op.quad(x)
    e2 = float(x @ x)
    assert q <= op.norm_bound() * e2 * (1 + 1e-12) + 1e-12
    assert q >= op.min_eig() * e2 * (1 - 1e-12) - 1e-12


def test_dirichlet_laplacian_quad_is_weighted_gradient_energy(rng):
    space = DiscreteSpace(5, 0.25)
    op = dirichlet_laplacian(space)
    # scaled so the quadratic form equals h * |grad x|^2
    A = dense_of(op, 5)
    expect = (np.diag(np.full(5, 2.0)) + np.diag(np.full(4, -1.0), 1) + np.diag(np.full(4, -1.0), -1)) / 0.25
    assert np.allclose(A, expect)
    x = rng.standard_normal(5)
    gx = space.grad(x)
    assert op.quad(x) == pytest.approx(0.25 * float(gx @ gx))
    eigs = np.linalg.eigvalsh(expect)
    assert op.min_eig() <= eigs[0] + 1e-10


def test_lumped_mass_is_h_identity():
    space = DiscreteSpace(4, 0.1)
    op = lumped_mass(space)
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert np.allclose(op.apply(x), 0.1 * x)


def test_norm_family_formulas(rng):
    space = DiscreteSpace(6, 0.4)
    M = lumped_mass(space)
    V = MetricOperator.identity(6, scale=0.4)
    fam = NormFamily.build(space, M, V)
    x = rng.standard_normal(6)
    assert fam.norm_Z(x) == pytest.approx(0.4 * np.abs(x).sum())
    assert fam.norm_W(x) == pytest.approx(np.sqrt(0.4 * x @ x))
    gx = space.grad(x)
    assert fam.norm_U(x) == pytest.approx(np.sqrt(0.4 * (x @ x + gx @ gx)))
    assert fam.norm_Zstar(x) == pytest.approx(np.abs(x).max() / 0.4)


def test_dual_norms_satisfy_pairing_bound(rng):
    # |<zeta, x>| <= |zeta|_{U*} |x|_U, with equality at the Riesz pair
    space = DiscreteSpace(5, 0.7)
    fam = NormFamily.build(space, lumped_mass(space), MetricOperator.identity(5))
    for _ in range(20):
        x = rng.standard_normal(5)
        zeta = rng.standard_normal(5)
        assert abs(zeta @ x) <= fam.norm_Ustar(zeta) * fam.norm_U(x) * (1 + 1e-9)
    stiff = dense_of(dirichlet_laplacian(space), 5)
    gram = 0.7 * np.eye(5) + stiff
    x = rng.standard_normal(5)
    zeta = gram @ x
    assert zeta @ x == pytest.approx(fam.norm_Ustar(zeta) * fam.norm_U(x), rel=1e-9)


def test_batch_norms_match_scalar_forms(rng):
    space = DiscreteSpace(4, 0.9)
    fam = NormFamily.build(space, lumped_mass(space), MetricOperator.identity(4))
    X = rng.standard_normal((7, 4))
    assert np.allclose(fam.norm_Z_batch(X), [fam.norm_Z(r) for r in X])
    assert np.allclose(fam.norm_W_batch(X), [fam.norm_W(r) for r in X])
    assert np.allclose(fam.norm_U_batch(X), [fam.norm_U(r) for r in X])
    assert np.allclose(fam.norm_Ustar2_batch(X), [fam.norm_Ustar(r) ** 2 for r in X])
