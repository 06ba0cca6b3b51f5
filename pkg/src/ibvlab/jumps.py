"""Jump detection and viscoinertial transition costs.

A jump in a near-limit run is a short window where the rate-independent
dissipation rate concentrates. The cost of crossing it is measured by
rerunning the scheme at unit inertia with time frozen at the jump instant,
integrating the contact potential along the resulting damped dynamics, and
certifying the path against the admissibility conditions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dissipation import DissipationPotential
from .energy import EnergyModel, FrozenTimeEnergy
from .spaces import MetricOperator, NormFamily
from .stepper import DiscreteTrajectory, InnerParams, _make_smooth, _prox_gradient


@dataclass(frozen=True)
class JumpRecord:
    """One detected rate concentration, with states read at the window edges.

    v_entry is the nodal rate at the left edge rescaled into the stretched
    time of the transition problem (eps times the stored rate); the window
    opens mid-fall, so the transition must be seeded with it."""

    t_star: float
    u_minus: np.ndarray
    u_plus: np.ndarray
    window: tuple
    window_k: tuple
    energy_drop: float
    R_jump: float
    v_entry: np.ndarray | None = None


def _state_at_or_before(traj: DiscreteTrajectory, k: int) -> tuple:
    if traj.has_full:
        return k, traj.u_full[k]
    lo, _ = traj.nearest_snapshots(k)
    return lo, traj.state(lo)


def _state_at_or_after(traj: DiscreteTrajectory, k: int) -> tuple:
    if traj.has_full:
        return k, traj.u_full[k]
    _, hi = traj.nearest_snapshots(k)
    return hi, traj.state(hi)


def detect_jumps(
    traj: DiscreteTrajectory,
    pot: DissipationPotential,
    threshold: float = 25.0,
    model: EnergyModel | None = None,
    pad_cells: int = 1,
) -> list:
    """Windows where R(v^k) exceeds threshold times the run's typical rate
    (median, floored by the time-averaged R-variation). The right edge of
    each window is then grown to where the rate re-enters creep range, so
    the post-jump state is read after the fast motion has settled; the left
    edge stays at the detection crossing, which trails the underlying fold
    by the usual delay of order eps^(2/3) (see fold_time_extrapolation).
    Edge states come from stored nodes just outside the window; the jump
    time is the window's left edge. With a model the energy drop is
    evaluated at frozen t_star, else from the stored node energies."""
    tau = traj.config.tau
    N = traj.n_steps
    rates = traj.R_rate[1:]
    total_vr = tau * float(rates.sum())
    if total_vr <= 0.0 or N == 0:
        return []
    med = float(np.median(rates))
    scale = max(med, total_vr / traj.config.T)
    hi = threshold * scale
    flagged = np.flatnonzero(rates > hi)  # indices into rates; cell k = idx + 1
    if flagged.size == 0:
        return []
    # settle bar: fast motion has ended once the rate is back in creep range
    lo = max(3.0 * med, 1e-3 * hi)
    fast = rates > lo
    windows: list[tuple[int, int]] = []
    for idx in flagged:
        c1 = c2 = int(idx)
        if windows and c1 <= windows[-1][1]:
            continue
        # An underdamped landing rings: the rate dips below the settle bar
        # for a few cells at every turning point, then climbs again. Close
        # the window only when a whole look-ahead span (one window width,
        # which covers at least a ring period) is quiet.
        while c2 + 1 < fast.size:
            ahead = max(3, c2 - c1 + 1)
            if not fast[c2 + 1 : c2 + 1 + ahead].any():
                break
            c2 += 1
        if windows and c1 <= windows[-1][1] + 1:
            windows[-1] = (windows[-1][0], c2)
        else:
            windows.append((c1, c2))
    records = []
    eps = traj.config.eps
    for c1, c2 in windows:
        k1 = max(c1 - pad_cells, 0)
        k2 = min(c2 + 1 + pad_cells, N)
        k1, u_minus = _state_at_or_before(traj, k1)
        k2, u_plus = _state_at_or_after(traj, k2)
        t_star = k1 * tau
        try:
            v_entry = eps * np.asarray(traj.rate(k1), dtype=float)
        except KeyError:
            v_entry = None
        r_jump = pot.R(u_plus - u_minus)
        # Discard flags whose displacement is microscopic next to the rate
        # that triggered them (isolated noisy cells).
        if r_jump < threshold * scale * tau * 1e-3:
            continue
        if model is not None:
            drop = model.value(t_star, u_minus) - model.value(t_star, u_plus)
        else:
            drop = float(traj.energy[k1] - traj.energy[k2])
        records.append(
            JumpRecord(
                t_star=t_star,
                u_minus=np.asarray(u_minus, dtype=float),
                u_plus=np.asarray(u_plus, dtype=float),
                window=(k1 * tau, k2 * tau),
                window_k=(k1, k2),
                energy_drop=drop,
                R_jump=r_jump,
                v_entry=v_entry,
            )
        )
    return records


def fold_time_extrapolation(pairs, exponent: float = 2.0 / 3.0) -> float:
    """Jump time extrapolated from detection onsets at several viscosities.

    The onset of the fast motion trails the underlying fold by a delay of
    order eps^exponent (the universal scaling of a viscously regularized
    fold), so fitting t_onset = t_fold + c * eps^exponent and reading off
    the intercept removes the leading bias. pairs holds (eps, t_onset)
    tuples from runs of the same problem; two suffice, more are fitted by
    least squares.
    """
    pts = sorted((float(e), float(t)) for e, t in pairs)
    if len(pts) < 2:
        raise ValueError("need at least two (eps, t_onset) pairs")
    x = np.array([e**exponent for e, _ in pts])
    y = np.array([t for _, t in pts])
    if float(x.max() - x.min()) <= 0.0:
        raise ValueError("eps values must differ for the extrapolation")
    slope, intercept = np.polyfit(x, y, 1)
    return float(intercept)


@dataclass(eq=False)
class TransitionPath:
    """Rescaled frozen-time dynamics from u_minus, with streaming aggregates
    used by the admissibility certificate."""

    t_star: float
    tau_prime: float
    sigma: float
    sigma_used: float
    steps_run: int
    converged: bool
    stable_end: bool
    u_start: np.ndarray
    u_end: np.ndarray
    v_end: np.ndarray
    u_target_minus: np.ndarray
    u_target_plus: np.ndarray
    times_snap: np.ndarray = field(repr=False)
    u_snap: np.ndarray = field(repr=False)
    v_snap: np.ndarray = field(repr=False)
    energy_start: float = 0.0
    energy_end: float = 0.0
    kinetic_start: float = 0.0
    kinetic_end: float = 0.0
    sum_Z_rate: float = 0.0
    chain_lhs: float = 0.0
    adm4_remainder: float = 0.0
    fenchel_min_margin: float = 0.0
    v_start_norm_V: float = 0.0
    v_end_norm_M: float = 0.0
    v_end_norm_V: float = 0.0
    end_stability_margin: float = 0.0


@dataclass(frozen=True)
class CostEstimate:
    """Discrete contact-potential integral along the transition."""

    value: float
    sigma_used: float
    converged: bool
    R_lower: float
    drop_along_path: float


def _landing_stiffness(model: EnergyModel, t_star: float, u_minus: np.ndarray, u_plus: np.ndarray) -> float:
    """Directional curvature at the landing state, used only to size the
    default horizon. Floored away from zero so a flat landing still gets a
    finite period."""
    d = np.asarray(u_plus, dtype=float) - np.asarray(u_minus, dtype=float)
    nd = float(np.linalg.norm(d))
    if nd == 0.0:
        return max(model.curvature() * 1e-3, 1e-6)
    d = d / nd
    delta = 1e-4 * (1.0 + float(np.abs(u_plus).max()))
    g1 = model.grad(t_star, u_plus + delta * d)
    g2 = model.grad(t_star, u_plus - delta * d)
    kappa = float(d @ (g1 - g2)) / (2.0 * delta)
    return max(abs(kappa), model.curvature() * 1e-3, 1e-6)


def solve_transition(
    model: EnergyModel,
    pot: DissipationPotential,
    mass_M: MetricOperator,
    visc_V: MetricOperator,
    jump: JumpRecord,
    sigma: float | None = None,
    tau_prime: float | None = None,
    params: InnerParams | None = None,
    beta: float = 1e-3,
    stab_tol: float = 1e-7,
    check_every: int = 512,
    snapshot_slots: int = 2048,
    norms: NormFamily | None = None,
    v0: np.ndarray | None = None,
) -> tuple:
    """Run the unit-inertia scheme at frozen time from (u_minus, v0).

    v0 defaults to the record's rescaled entry rate (rest if absent): the
    detection window opens once the fall is already underway, so starting
    from rest would land the path at the wrong phase of an underdamped
    ring-down. Stops early once a whole check window has M-velocity below
    beta and the current state is frictionally stable; converged records
    whether that happened within the horizon. Returns
    (TransitionPath, CostEstimate)."""
    frozen = FrozenTimeEnergy(model, jump.t_star)
    if norms is None:
        norms = NormFamily.build(model.space, mass_M, visc_V)
    if sigma is None:
        kappa = _landing_stiffness(model, jump.t_star, jump.u_minus, jump.u_plus)
        sigma = 50.0 * 2.0 * np.pi * float(np.sqrt(mass_M.norm_bound() / kappa))
    if tau_prime is None:
        tau_prime = sigma / 1e5
    if params is None:
        params = InnerParams()
    n_steps = max(1, round(sigma / tau_prime))
    bind, L_cert = _make_smooth(frozen, mass_M, visc_V, 1.0, tau_prime)
    w = pot.w
    t_star = jump.t_star

    u_prev = np.asarray(jump.u_minus, dtype=float).copy()
    if v0 is None:
        v0 = jump.v_entry
    v_prev = np.zeros_like(u_prev) if v0 is None else np.asarray(v0, dtype=float).copy()
    u_prev2 = u_prev - tau_prime * v_prev

    stride = max(1, -(-(n_steps + 1) // snapshot_slots))
    snap_t = [0.0]
    snap_u = [u_prev.copy()]
    snap_v = [v_prev.copy()]

    cost = 0.0
    sum_Z = 0.0
    chain_lhs = 0.0
    sum_dv2_M = 0.0
    sum_w2 = 0.0
    fen_min = np.inf
    e_start = frozen.value(0.0, u_prev)
    k_start = 0.5 * mass_M.quad(v_prev)
    v0_norm_V = visc_V.norm(v_prev)
    window_v_max = 0.0
    k_stop = n_steps
    converged = False

    for k in range(1, n_steps + 1):
        p = 2.0 * u_prev - u_prev2
        grad_S, val_S = bind(t_star, p, u_prev)
        u, eta, _ = _prox_gradient(grad_S, val_S, u_prev, p, w, L_cert, params)
        v = (u - u_prev) / tau_prime
        xi = frozen.grad(t_star, u)
        accel = mass_M.apply(v - v_prev) / tau_prime
        zeta = -accel - xi
        pv = pot.contact_potential(visc_V, v, zeta)
        cost += tau_prime * pv
        fen_min = min(fen_min, pv - float(zeta @ v))
        sum_Z += tau_prime * norms.norm_Z(v)
        chain_lhs += tau_prime * float((accel + xi) @ v)
        sum_dv2_M += 0.5 * mass_M.quad(v - v_prev)
        sum_w2 += tau_prime * tau_prime * model.space.h * float(v @ v)
        window_v_max = max(window_v_max, mass_M.norm(v))

        if k % stride == 0 or k == n_steps:
            snap_t.append(k * tau_prime)
            snap_u.append(u.copy())
            snap_v.append(v.copy())

        u_prev2, u_prev, v_prev = u_prev, u, v

        if k % check_every == 0:
            stable = float((np.abs(xi) - w).max()) <= stab_tol
            if window_v_max <= beta and stable:
                k_stop = k
                converged = True
                break
            window_v_max = 0.0

    u_end, v_end = u_prev, v_prev
    xi_end = frozen.grad(t_star, u_end)
    end_margin = float((np.abs(xi_end) - w).max())
    stable_end = end_margin <= stab_tol
    v_end_M = mass_M.norm(v_end)
    if not converged:
        converged = stable_end and v_end_M <= beta
        k_stop = n_steps
    e_end = frozen.value(0.0, u_end)
    if snap_t[-1] < k_stop * tau_prime - 1e-15:
        snap_t.append(k_stop * tau_prime)
        snap_u.append(u_end.copy())
        snap_v.append(v_end.copy())
    path = TransitionPath(
        t_star=t_star,
        tau_prime=tau_prime,
        sigma=sigma,
        sigma_used=k_stop * tau_prime,
        steps_run=k_stop,
        converged=converged,
        stable_end=stable_end,
        u_start=np.asarray(jump.u_minus, dtype=float),
        u_end=u_end,
        v_end=v_end,
        u_target_minus=np.asarray(jump.u_minus, dtype=float),
        u_target_plus=np.asarray(jump.u_plus, dtype=float),
        times_snap=np.asarray(snap_t),
        u_snap=np.asarray(snap_u),
        v_snap=np.asarray(snap_v),
        energy_start=e_start,
        energy_end=e_end,
        kinetic_start=k_start,
        kinetic_end=0.5 * mass_M.quad(v_end),
        sum_Z_rate=sum_Z,
        chain_lhs=chain_lhs,
        adm4_remainder=sum_dv2_M + 0.5 * model.lam * sum_w2,
        fenchel_min_margin=float(fen_min) if np.isfinite(fen_min) else 0.0,
        v_start_norm_V=v0_norm_V,
        v_end_norm_M=v_end_M,
        v_end_norm_V=visc_V.norm(v_end),
        end_stability_margin=end_margin,
    )
    estimate = CostEstimate(
        value=cost,
        sigma_used=path.sigma_used,
        converged=converged,
        R_lower=pot.R(u_end - path.u_start),
        drop_along_path=e_start - e_end,
    )
    return path, estimate


@dataclass(frozen=True)
class AdmissibilityReport:
    """Margins for the four transition admissibility conditions.

    Positive margins mean satisfied. adm2 is exact by construction (forces
    are recomputed gradients, so the subgradient slack alpha is realized as
    zero) and is reported, not measured."""

    adm1_margin: float
    adm2_alpha: float
    adm3_endpoint_U: float
    adm3_start_rate_V: float
    adm3_end_rate_V: float
    adm4_margin: float
    beta_used: float
    adm1_ok: bool
    adm2_ok: bool
    adm3_ok: bool
    adm4_ok: bool
    passed: bool


def certify_admissibility(
    path: TransitionPath,
    pot: DissipationPotential,
    model: EnergyModel,
    alpha: float,
    beta: float,
    bound_const: float,
) -> AdmissibilityReport:
    """Evaluate the four conditions on a solved transition path.

    adm1 compares the accumulated Z-rate to twice the parent run's ledger
    constant; adm3 measures endpoint position and both endpoint rates
    against beta; adm4 is the discrete chain-rule inequality with its
    computable discreteness remainder. The start position is exact by
    construction, but the start rate is not: a seeded path begins at the
    parent run's rescaled entry rate, so it is admissible only at levels
    beta at least that large."""
    adm1_margin = 2.0 * bound_const - path.sum_Z_rate
    space = model.space
    gap = path.u_end - path.u_target_plus
    gp = space.grad(gap)
    endpoint_gap = float(np.sqrt(space.h * (float(gap @ gap) + float(gp @ gp))))
    adm3_endpoint = beta - endpoint_gap
    adm3_start = beta - path.v_start_norm_V
    adm3_end = beta - path.v_end_norm_V
    scale = 1.0 + abs(path.energy_start) + abs(path.energy_end) + path.kinetic_end
    rhs = (
        (0.5 * path.v_end_norm_M**2 + path.energy_end)
        - (path.kinetic_start + path.energy_start)
        + 2.0 * bound_const * alpha
        + path.adm4_remainder
        + 1e-9 * scale
    )
    adm4_margin = rhs - path.chain_lhs
    adm1_ok = adm1_margin >= 0.0
    adm2_ok = alpha >= 0.0
    adm3_ok = adm3_endpoint >= 0.0 and adm3_start >= 0.0 and adm3_end >= 0.0
    adm4_ok = adm4_margin >= 0.0
    return AdmissibilityReport(
        adm1_margin=float(adm1_margin),
        adm2_alpha=float(alpha),
        adm3_endpoint_U=float(adm3_endpoint),
        adm3_start_rate_V=float(adm3_start),
        adm3_end_rate_V=float(adm3_end),
        adm4_margin=float(adm4_margin),
        beta_used=float(beta),
        adm1_ok=adm1_ok,
        adm2_ok=adm2_ok,
        adm3_ok=adm3_ok,
        adm4_ok=adm4_ok,
        passed=adm1_ok and adm2_ok and adm3_ok and adm4_ok,
    )


@dataclass(frozen=True)
class ReconcileVerdict:
    passed: bool
    cost: float
    drop: float
    rel_err: float
    used_path_drop: bool


def reconcile_jump(jump: JumpRecord, cost: CostEstimate, tol_rel: float = 0.05) -> ReconcileVerdict:
    """PASS iff the certified transition cost matches the measured energy
    drop within tol_rel. The drop between the transition's own endpoints is
    authoritative; the parent-run window drop is the fallback when the
    transition did not converge."""
    if cost.converged:
        drop = cost.drop_along_path
        used_path = True
    else:
        drop = jump.energy_drop
        used_path = False
    err = abs(cost.value - drop)
    return ReconcileVerdict(
        passed=bool(cost.converged and err <= tol_rel * (1.0 + abs(drop))),
        cost=cost.value,
        drop=drop,
        rel_err=err / (1.0 + abs(drop)),
        used_path_drop=used_path,
    )


def write_jumps_csv(entries: Sequence[tuple], path) -> None:
    """jumps.csv rows (t_star, window, drop, cost, verdict); entries are
    (JumpRecord, CostEstimate, ReconcileVerdict)."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["t_star", "window", "drop", "cost", "verdict"])
        for jump, cost, verdict in entries:
            window = f"{jump.window[0]!r}:{jump.window[1]!r}"
            out.writerow(
                [
                    repr(jump.t_star),
                    window,
                    repr(verdict.drop),
                    repr(cost.value),
                    "PASS" if verdict.passed else "FAIL",
                ]
            )


def write_transition_csv(path_obj: TransitionPath, path) -> None:
    """Strided transition path dump: s, then one column per component."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        n = path_obj.u_snap.shape[1]
        out.writerow(["s", *[f"u{i}" for i in range(n)]])
        for t, row in zip(path_obj.times_snap, path_obj.u_snap):
            out.writerow([repr(float(t)), *[repr(float(x)) for x in row]])
