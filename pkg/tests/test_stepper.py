"""The incremental scheme: single steps against hand oracles, trajectory
ledgers, inner-solver honesty, and failure surfacing."""

import numpy as np
import pytest

from ibvlab.dissipation import DissipationPotential
from ibvlab.energy import DoubleWellEnergy, QuadraticEnergy, ScalarToyEnergy
from ibvlab.spaces import DiscreteSpace, MetricOperator, NormFamily, lumped_mass
from ibvlab.stepper import (
    InnerParams,
    SchemeConfig,
    TrajectoryError,
    incremental_step,
    run_trajectory,
    spot_check_minimality,
)


def scalar_setup(load_scale: float):
    space = DiscreteSpace(1, 1.0)
    I = MetricOperator.identity(1)
    pot = DissipationPotential(np.array([1.0]))
    model = QuadraticEnergy(
        space=space,
        stiff_A=I,
        f=lambda t: np.array([load_scale * t]),
        fdot=lambda t: np.array([load_scale]),
    )
    return model, pot, I


def chain_setup(n=6, L=10.0):
    h = L / (n + 1)
    space = DiscreteSpace(n, h)
    model = DoubleWellEnergy(
        space=space,
        load=lambda t: np.full(n, 0.6 * t),
        load_rate=lambda t: np.full(n, 0.6),
    )
    pot = DissipationPotential.uniform(n, nu=0.2, h=h)
    M = lumped_mass(space)
    V = MetricOperator.identity(n, scale=h)
    return model, pot, M, V


@pytest.mark.parametrize(
    "load_scale,expect",
    [(3.0, 2.0 / 3.0), (1.0, 0.0), (0.5, 0.0), (-4.0, -1.0)],
)
def test_single_step_hand_oracle(load_scale, expect):
    # eps = tau = 1 from rest: minimize (3/2)u^2 + |u| - c u, so
    # u = sign(c) max(|c| - 1, 0)/3
    model, pot, I = scalar_setup(load_scale)
    rec = incremental_step(
        model, pot, I, I, eps=1.0, tau=1.0, t=1.0,
        u_prev=np.zeros(1), u_prev2=np.zeros(1), k=1,
    )
    assert rec.u[0] == pytest.approx(expect, abs=1e-12)
    assert rec.el_res < 1e-12
    assert rec.compl < 1e-12


def test_single_step_multiplier_is_certified(rng):
    model, pot, I = scalar_setup(3.0)
    rec = incremental_step(
        model, pot, I, I, eps=1.0, tau=1.0, t=1.0,
        u_prev=np.zeros(1), u_prev2=np.zeros(1), k=1,
    )
    # moving step saturates the friction bound in the motion direction
    assert rec.eta[0] == pytest.approx(1.0, abs=1e-12)
    assert pot.subdiff_membership(rec.eta, rec.v, tol=1e-10)


def test_step_minimizes_over_brute_force_grid():
    # nonconvex onsite term, nonzero history
    model = ScalarToyEnergy(
        Wfun=lambda x: 0.25 * (1 - x * x) ** 2,
        Wprime=lambda x: x**3 - x,
        f=lambda t: 0.9 * t,
        fdot=lambda t: 0.9,
        lam=1.0,
        curvature_const=2.0 + 6.0 * 2.5**2,
    )
    pot = DissipationPotential(np.array([0.2]))
    I = MetricOperator.identity(1)
    eps, tau, t = 0.3, 0.05, 0.7
    u_prev = np.array([-0.9])
    u_prev2 = np.array([-0.95])
    rec = incremental_step(model, pot, I, I, eps, tau, t, u_prev, u_prev2, k=1)

    p = 2.0 * u_prev - u_prev2

    def F(u):
        v = (u - u_prev[0]) / tau
        return (
            (eps**2 / (2 * tau**2)) * (u - p[0]) ** 2
            + tau * (0.2 * abs(v) + (eps / 2) * v * v)
            + model.value(t, np.array([u]))
        )

    grid = np.linspace(-2.4, 2.4, 240001)
    brute = min(F(u) for u in grid)
    assert F(rec.u[0]) <= brute + 1e-10


def test_spot_check_minimality_nonnegative(rng):
    model, pot, M, V = chain_setup()
    n = model.space.n
    u_prev = rng.uniform(-0.5, 0.5, n)
    u_prev2 = u_prev - 0.01 * rng.standard_normal(n)
    rec = incremental_step(model, pot, M, V, eps=0.1, tau=0.01, t=0.5, u_prev=u_prev, u_prev2=u_prev2, k=1)
    margin = spot_check_minimality(
        model, pot, M, V, eps=0.1, tau=0.01, t=0.5,
        u=rec.u, u_prev=u_prev, u_prev2=u_prev2, rng=rng,
    )
    assert margin >= -1e-9


def run_chain(T=0.2, tau=1e-3, eps=0.05, collect="full", **cfg_kw):
    model, pot, M, V = chain_setup()
    config = SchemeConfig(eps=eps, tau=tau, T=T, u0=np.zeros(model.space.n), collect=collect, **cfg_kw)
    traj = run_trajectory(model, pot, M, V, config)
    return model, pot, M, V, traj


def test_trajectory_ledger_lengths_and_certificates():
    model, pot, M, V, traj = run_chain()
    N = traj.n_steps
    assert N == 200
    assert traj.energy.shape == (N + 1,)
    assert traj.el_res[1:].max() < 1e-8
    assert traj.compl[1:].max() < 1e-8
    assert traj.truncated_at is None
    assert traj.has_full
    assert traj.regime_ok


def test_trajectory_streaming_ledgers_match_recomputation():
    model, pot, M, V, traj = run_chain(T=0.05)
    for k in (1, 17, 50):
        u, v = traj.state(k), traj.rate(k)
        assert traj.energy[k] == pytest.approx(model.value(k * traj.config.tau, u))
        assert traj.kinetic[k] == pytest.approx(0.5 * traj.config.eps ** 2 * M.quad(v))
        assert traj.R_rate[k] == pytest.approx(pot.R(v))
        assert traj.normV2_v[k] == pytest.approx(V.quad(v))
        assert np.allclose(v, (traj.state(k) - traj.state(k - 1)) / traj.config.tau)


def test_trajectory_is_deterministic():
    *_, a = run_chain(T=0.05)
    *_, b = run_chain(T=0.05)
    assert a.u_full.tobytes() == b.u_full.tobytes()
    assert a.el_res.tobytes() == b.el_res.tobytes()


def test_initial_rate_enters_kinetic_ledger():
    model, pot, M, V = chain_setup()
    n = model.space.n
    u1 = 0.3 * np.ones(n)
    config = SchemeConfig(eps=0.05, tau=1e-3, T=0.01, u0=np.zeros(n), u1=u1)
    traj = run_trajectory(model, pot, M, V, config)
    assert traj.kinetic[0] == pytest.approx(0.5 * 0.05**2 * M.quad(u1))


def test_light_collect_drops_dual_columns():
    model, pot, M, V, traj = run_chain(T=0.05, collect="light")
    assert np.isnan(traj.Rstar_term[1:]).all()
    assert np.isfinite(traj.el_res[1:]).all()


def test_snapshot_mode_state_access():
    model, pot, M, V, traj = run_chain(T=0.2, store_full=False, snapshot_slots=16)
    assert not traj.has_full
    k = int(traj.snap_ks[3])
    assert traj.state(k).shape == (model.space.n,)
    missing = k + 1
    if missing not in set(traj.snap_ks.tolist()):
        with pytest.raises(KeyError):
            traj.state(missing)
        lo, hi = traj.nearest_snapshots(missing)
        assert lo <= missing <= hi


def test_tau_must_divide_horizon():
    with pytest.raises(ValueError):
        SchemeConfig(eps=0.1, tau=3e-3, T=1.0, u0=np.zeros(2))


def test_inner_failure_carries_partial_trajectory():
    # the load starts above the friction threshold, so every step moves and
    # a single inner iteration cannot reach the certificate tolerance
    h = 10.0 / 7.0
    space = DiscreteSpace(6, h)
    model = DoubleWellEnergy(
        space=space,
        load=lambda t: np.full(6, 1.0 + 0.6 * t),
        load_rate=lambda t: np.full(6, 0.6),
    )
    pot = DissipationPotential.uniform(6, nu=0.2, h=h)
    M = lumped_mass(space)
    V = MetricOperator.identity(6, scale=h)
    n = 6
    config = SchemeConfig(
        eps=0.05, tau=1e-3, T=0.1, u0=np.zeros(n),
        inner=InnerParams(tol=1e-15, max_iter=1),
    )
    with pytest.raises(TrajectoryError) as err:
        run_trajectory(model, pot, M, V, config)
    partial = err.value.partial
    assert partial.truncated_at is not None
    assert partial.truncated_at < config.n_steps
    assert partial.energy.shape == (partial.truncated_at + 1,)


def test_state_box_violation_is_a_hard_error():
    space = DiscreteSpace(1, 1.0)
    I = MetricOperator.identity(1)
    model = QuadraticEnergy(
        space=space, stiff_A=I,
        f=lambda t: np.array([40.0 * t]),
        fdot=lambda t: np.array([40.0]),
        state_box=0.5,
    )
    pot = DissipationPotential(np.array([0.1]))
    config = SchemeConfig(eps=0.05, tau=0.05, T=1.0, u0=np.zeros(1))
    with pytest.raises(TrajectoryError, match="box"):
        run_trajectory(model, pot, I, I, config)


def test_strict_descent_route_agrees_with_fast_route():
    model, pot, M, V = chain_setup()
    n = model.space.n
    fast = run_trajectory(
        model, pot, M, V, SchemeConfig(eps=0.05, tau=2e-3, T=0.1, u0=np.zeros(n))
    )
    checked = run_trajectory(
        model, pot, M, V,
        SchemeConfig(
            eps=0.05, tau=2e-3, T=0.1, u0=np.zeros(n),
            inner=InnerParams(trial_scale=0.5, strict_descent=True),
        ),
    )
    assert np.allclose(fast.u_full[-1], checked.u_full[-1], atol=1e-8)


def test_regime_flag_reports_ratio_violation():
    model, pot, M, V = chain_setup()
    n = model.space.n
    assert model.lam > 0.0
    bad = SchemeConfig(eps=1e-4, tau=0.05, T=0.1, u0=np.zeros(n))
    assert not bad.regime_ok(model, V)
    good = SchemeConfig(eps=0.05, tau=1e-3, T=0.1, u0=np.zeros(n))
    assert good.regime_ok(model, V)


def test_observers_see_every_step():
    model, pot, M, V = chain_setup()
    n = model.space.n
    seen = []

    class Probe:
        def begin(self, config, u0, v0):
            seen.append(("begin", u0.copy()))

        def on_step(self, k, t, u, v, v_prev):
            seen.append((k, u.copy()))

        def end(self, u_final, v_final):
            seen.append(("end", u_final.copy()))

    config = SchemeConfig(eps=0.05, tau=1e-2, T=0.1, u0=np.zeros(n))
    traj = run_trajectory(model, pot, M, V, config, observers=(Probe(),))
    assert seen[0][0] == "begin"
    assert seen[-1][0] == "end"
    ks = [s[0] for s in seen[1:-1]]
    assert ks == list(range(1, 11))
    assert np.allclose(seen[-2][1], traj.u_full[-1])
