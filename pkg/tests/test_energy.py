"""Energy models: values, gradients, work integrals, and the stability audit."""

import numpy as np
import pytest

from ibvlab.dissipation import DissipationPotential
from ibvlab.energy import (
    DoubleWellEnergy,
    FrozenTimeEnergy,
    QuadraticEnergy,
    ScalarToyEnergy,
    double_well,
    double_well_prime,
    smallest_dirichlet_eigenvalue,
    stability_audit,
)
from ibvlab.spaces import DiscreteSpace, MetricOperator, dirichlet_laplacian


def fd_grad(model, t, u, delta=1e-6):
    g = np.empty_like(u)
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = delta
        g[i] = (model.value(t, u + e) - model.value(t, u - e)) / (2 * delta)
    return g


@pytest.fixture
def quad_model():
    space = DiscreteSpace(4, 1.0)
    A = MetricOperator.diagonal(np.array([1.0, 2.0, 1.5, 3.0]))
    return QuadraticEnergy(
        space=space,
        stiff_A=A,
        f=lambda t: np.array([t, 2 * t, 0.0, -t]),
        fdot=lambda t: np.array([1.0, 2.0, 0.0, -1.0]),
    )


@pytest.fixture
def toy_model():
    # double-well onsite with ramp load, the jump-oracle host
    return ScalarToyEnergy(
        Wfun=lambda x: 0.25 * (1 - x * x) ** 2,
        Wprime=lambda x: x**3 - x,
        f=lambda t: t,
        fdot=lambda t: 1.0,
        lam=1.0,
        curvature_const=2.0 + 6.0 * 2.5**2,
    )


def test_quadratic_gradient_matches_finite_differences(quad_model, rng):
    u = rng.standard_normal(4)
    assert np.allclose(quad_model.grad(0.7, u), fd_grad(quad_model, 0.7, u), atol=1e-5)


def test_quadratic_power_is_time_derivative(quad_model, rng):
    u = rng.standard_normal(4)
    d = 1e-6
    fd = (quad_model.value(0.5 + d, u) - quad_model.value(0.5 - d, u)) / (2 * d)
    assert quad_model.power(0.5, u) == pytest.approx(fd, abs=1e-5)


def test_quadratic_work_integral_is_exact(quad_model, rng):
    # antiderivative route vs fine quadrature of the power
    u = rng.standard_normal(4)
    t0, t1 = 0.2, 0.9
    ts = np.linspace(t0, t1, 20001)
    quad = np.trapezoid([quad_model.power(t, u) for t in ts], ts)
    assert quad_model.work_integral(t0, t1, u) == pytest.approx(quad, abs=1e-9)


def test_quadratic_convexity_modulus(quad_model):
    assert quad_model.lam == 0.0
    assert quad_model.convexity_modulus_W() == pytest.approx(1.0)


def test_double_well_prime_is_derivative():
    xs = np.linspace(-2, 2, 41)
    d = 1e-6
    fd = (double_well(xs + d) - double_well(xs - d)) / (2 * d)
    assert np.allclose(double_well_prime(xs), fd, atol=1e-8)


def test_double_well_fold_location():
    # branch of W'(u) = const loses stability where W'' = 0
    u_fold = -1.0 / np.sqrt(3.0)
    d = 1e-7
    second = (double_well_prime(u_fold + d) - double_well_prime(u_fold - d)) / (2 * d)
    assert second == pytest.approx(0.0, abs=1e-6)
    assert double_well_prime(u_fold) == pytest.approx(2.0 / (3.0 * np.sqrt(3.0)))


def test_smallest_dirichlet_eigenvalue_matches_dense():
    space = DiscreteSpace(12, 10.0 / 13.0)
    A = np.column_stack([dirichlet_laplacian(space).apply(e) for e in np.eye(12)])
    # generalized problem against the lumped mass h*I
    eigs = np.linalg.eigvalsh(A / space.h)
    assert smallest_dirichlet_eigenvalue(space) == pytest.approx(eigs[0], rel=1e-9)


def test_chain_energy_gradient_and_lambda(rng):
    space = DiscreteSpace(10, 10.0 / 11.0)
    model = DoubleWellEnergy(
        space=space,
        load=lambda t: np.full(10, 0.3 * t),
        load_rate=lambda t: np.full(10, 0.3),
    )
    u = rng.uniform(-1.5, 1.5, 10)
    assert np.allclose(model.grad(0.4, u), fd_grad(model, 0.4, u), atol=2e-5)
    lam1 = smallest_dirichlet_eigenvalue(space)
    assert model.lam == pytest.approx(max(0.0, 1.0 - lam1))
    # onsite curvature is -1 at the origin; lam certifies W-convexity of E + lam/2 |.|_W^2
    assert model.lam > 0.0


def test_chain_energy_value_formula(rng):
    space = DiscreteSpace(6, 0.5)
    load = np.linspace(0.1, 0.6, 6)
    model = DoubleWellEnergy(space=space, load=lambda t: t * load, load_rate=lambda t: load)
    u = rng.standard_normal(6)
    gu = space.grad(u)
    expect = 0.5 * 0.5 * float(gu @ gu) + 0.5 * float(double_well(u).sum()) - 0.5 * float(load @ u)
    assert model.value(1.0, u) == pytest.approx(expect)


def test_toy_gradient_and_work(toy_model):
    u = np.array([0.37])
    assert np.allclose(toy_model.grad(0.6, u), fd_grad(toy_model, 0.6, u), atol=1e-6)
    # work over a step load is carried by the load difference
    assert toy_model.work_integral(0.1, 0.4, u) == pytest.approx(-(0.4 - 0.1) * 0.37)


def test_frozen_time_energy_is_autonomous(toy_model):
    frozen = FrozenTimeEnergy(toy_model, t_star=0.55)
    u = np.array([-0.8])
    for s in (0.0, 1.0, 17.3):
        assert frozen.value(s, u) == pytest.approx(toy_model.value(0.55, u))
        assert np.allclose(frozen.grad(s, u), toy_model.grad(0.55, u))
        assert frozen.power(s, u) == 0.0
    assert frozen.work_integral(0.0, 5.0, u) == 0.0
    assert frozen.lam == toy_model.lam


def test_stability_audit_passes_in_the_well(toy_model):
    pot = DissipationPotential(np.array([0.2]))
    probes = np.linspace(-2.0, 2.0, 81)[:, None]
    report = stability_audit(toy_model, pot, t=0.0, u=np.array([-1.0]), probes=probes, tol=1e-9)
    assert report.first_order_ok
    assert report.passed
    assert report.worst_margin >= -1e-9


def test_stability_audit_fails_past_the_fold(toy_model):
    # the left branch has folded by f = 0.65; the force leaves the friction box
    pot = DissipationPotential(np.array([0.2]))
    u = np.array([-1.0 / np.sqrt(3.0)])
    report = stability_audit(toy_model, pot, t=0.65, u=u, probes=np.linspace(-2, 2, 81)[:, None], tol=1e-9)
    assert not report.first_order_ok
    assert report.box_margin == pytest.approx(0.2 - abs(2.0 / (3.0 * np.sqrt(3.0)) - 0.65), abs=1e-12)
    assert not report.passed


def test_first_order_stability_implies_probe_stability(toy_model):
    # with the semiconvexity weight in the probe functional the two tests
    # are equivalent; a force strictly inside the box must pass everywhere
    pot = DissipationPotential(np.array([0.2]))
    u = np.array([-0.782])
    t = 0.4
    xi = toy_model.grad(t, u)
    assert abs(xi[0]) < 0.2
    probes = np.linspace(-2.0, 2.0, 161)[:, None]
    loc = stability_audit(toy_model, pot, t=t, u=u, probes=probes, tol=1e-9)
    assert loc.first_order_ok
    assert loc.passed
    assert loc.margins.min() >= -1e-9
