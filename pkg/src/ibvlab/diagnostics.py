"""Interpolants, energy-dissipation ledger, uniform bounds, mismatch metrics,
and defect-measure bookkeeping.

Everything here is a read-only analysis of a finished trajectory. Mismatch
metrics are computed from exact per-cell antiderivatives (each interpolant
difference is polynomial in the cell-local time), so reported values carry no
quadrature error; the only inexactness is floating point.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dissipation import DissipationPotential
from .energy import EnergyModel
from .spaces import MetricOperator, NormFamily
from .stepper import DiscreteTrajectory, SchemeConfig


def pi_tau(t, tau: float):
    """Right node map: t in (t^{k-1}, t^k] goes to t^k (0 stays 0)."""
    t = np.asarray(t, dtype=float)
    k = np.ceil(t / tau - 1e-12)
    out = np.maximum(k, 0.0) * tau
    return float(out) if out.ndim == 0 else out


class InterpolantView:
    """Evaluators for the four interpolants of a fully stored trajectory.

    right_constant holds u^k on (t^{k-1}, t^k], left_constant holds u^{k-1}
    on [t^{k-1}, t^k), linear joins the nodes, and smoothed is the C^1 curve
    whose rate interpolates the discrete rates v^{k-1} -> v^k on each cell
    (so smoothed(t^k) = u^k - (tau/2) v^k).
    """

    def __init__(self, traj: DiscreteTrajectory):
        if not traj.has_full:
            raise ValueError("interpolants need full state storage; rerun with store_full=True")
        self.traj = traj
        self.tau = traj.config.tau
        self.N = traj.n_steps

    def _cell(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < -1e-12) or np.any(t > self.N * self.tau * (1 + 1e-12) + 1e-15):
            raise ValueError("time outside [0, T]")
        k = np.clip(np.ceil(t / self.tau - 1e-12).astype(int), 1, self.N)
        sigma = t - (k - 1) * self.tau
        return t, k, sigma

    @staticmethod
    def _shape(out: np.ndarray, t) -> np.ndarray:
        return out[0] if np.ndim(t) == 0 else out

    def right_constant(self, t):
        ts, k, _ = self._cell(t)
        k = np.where(ts <= 1e-12 * self.tau, 0, k)
        return self._shape(self.traj.u_full[k], t)

    def left_constant(self, t):
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        j = np.clip(np.floor(ts / self.tau + 1e-12).astype(int), 0, self.N)
        return self._shape(self.traj.u_full[j], t)

    def linear(self, t):
        _, k, sigma = self._cell(t)
        u_prev = self.traj.u_full[k - 1]
        v = self.traj.v_full[k]
        return self._shape(u_prev + sigma[:, None] * v, t)

    def linear_rate(self, t):
        _, k, _ = self._cell(t)
        return self._shape(self.traj.v_full[k], t)

    def smoothed(self, t):
        _, k, sigma = self._cell(t)
        tau = self.tau
        u_prev = self.traj.u_full[k - 1]
        v_prev = self.traj.v_full[k - 1]
        dv = self.traj.v_full[k] - v_prev
        s = sigma[:, None]
        return self._shape(u_prev + (s - tau / 2.0) * v_prev + (s * s / (2.0 * tau)) * dv, t)

    def smoothed_rate(self, t):
        _, k, sigma = self._cell(t)
        v_prev = self.traj.v_full[k - 1]
        dv = self.traj.v_full[k] - v_prev
        return self._shape(v_prev + (sigma / self.tau)[:, None] * dv, t)


# -- exact per-cell integrals -------------------------------------------------
#
# On one cell with local time s in [0, tau]:
#   smoothed - linear = -[(tau/2) v_prev + g(s) dv],  g(s) = s - s^2/(2 tau)
#   linear_rate - smoothed_rate = dv (1 - s/tau)
# g grows from 0 to tau/2; integrals of |a + g b| and |a + (s/tau) b| split at
# the single sign change and use the antiderivatives G = s^2/2 - s^3/(6 tau)
# and s^2/(2 tau).


def _abs_int_smooth(a: np.ndarray, b: np.ndarray, tau: float) -> np.ndarray:
    end = a + 0.5 * tau * b
    P_tau = a * tau + b * (tau * tau / 3.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        g_star = np.where(b != 0.0, -a / b, 0.0)
    g_star = np.clip(g_star, 0.0, 0.5 * tau)
    s_star = tau * (1.0 - np.sqrt(np.maximum(1.0 - 2.0 * g_star / tau, 0.0)))
    P_star = a * s_star + b * (s_star * s_star / 2.0 - s_star**3 / (6.0 * tau))
    split = np.abs(P_star) + np.abs(P_tau - P_star)
    return np.where(a * end >= 0.0, np.abs(P_tau), split)


def _abs_int_linear(a: np.ndarray, b: np.ndarray, tau: float) -> np.ndarray:
    end = a + b
    P_tau = tau * (a + 0.5 * b)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_star = np.where(b != 0.0, -tau * a / b, 0.0)
    s_star = np.clip(s_star, 0.0, tau)
    P_star = a * s_star + b * (s_star * s_star / (2.0 * tau))
    split = np.abs(P_star) + np.abs(P_tau - P_star)
    return np.where(a * end >= 0.0, np.abs(P_tau), split)


def _cell_aggregates(V1: np.ndarray, V2: np.ndarray, tau: float, visc_V: MetricOperator, norms: NormFamily) -> dict:
    """Mismatch contributions of the cells whose entering/exiting rates are
    the rows of V1/V2. Keys starting sum_ add across chunks, max_ take max."""
    h = norms.h
    D = V2 - V1
    C = 0.5 * tau * V1
    VC = visc_V.apply_batch(C)
    qC = np.einsum("ij,ij->i", VC, C)
    cCD = np.einsum("ij,ij->i", VC, D)
    qD = visc_V.quad_batch(D)
    return {
        "sum_Z_exit": float(norms.norm_Z_batch(V2).sum()),
        "sum_V2_exit": float(visc_V.quad_batch(V2).sum()),
        "max_U_exit": float(norms.norm_U_batch(V2).max()),
        "max_W_exit": float(norms.norm_W_batch(V2).max()),
        "sum_L1Z_smooth": float(h * _abs_int_smooth(C, D, tau).sum()),
        "sum_L2V2_smooth": float((tau * qC + (2.0 * tau * tau / 3.0) * cCD + (2.0 * tau**3 / 15.0) * qD).sum()),
        "sum_rateV2": float((tau / 3.0) * qD.sum()),
        "sum_rateU2": float((tau / 3.0) * norms.norm_Ustar2_batch(D).sum()),
    }


def _merge(agg: dict, inc: dict) -> None:
    for key, val in inc.items():
        if key.startswith("sum_"):
            agg[key] = agg.get(key, 0.0) + val
        else:
            agg[key] = max(agg.get(key, -np.inf), val)


@dataclass(frozen=True)
class MismatchReport:
    """Exact interpolant mismatch metrics for one run.

    Differences: right_left = right_constant - left_constant,
    linear_right = linear - right_constant, smooth_linear = smoothed - linear;
    rate metrics measure linear_rate - smoothed_rate.
    """

    tau: float
    eps: float
    supU_right_left: float
    supU_linear_right: float
    supU_smooth_linear: float
    supW_right_left: float
    supW_linear_right: float
    supW_smooth_linear: float
    L1Z_right_left: float
    L1Z_linear_right: float
    L1Z_smooth_linear: float
    L2V_right_left: float
    L2V_linear_right: float
    L2V_smooth_linear: float
    L2V_rate_full: float
    L2V_rate_tail: float
    L2Ustar_rate: float
    head_supW_smooth_linear: float
    head_L2V_rate: float

    @property
    def supW_total(self) -> float:
        return max(self.supW_right_left, self.supW_linear_right, self.supW_smooth_linear)

    @property
    def supU_total(self) -> float:
        return max(self.supU_right_left, self.supU_linear_right, self.supU_smooth_linear)

    @property
    def L1Z_total(self) -> float:
        return max(self.L1Z_right_left, self.L1Z_linear_right, self.L1Z_smooth_linear)

    @property
    def L2V_total(self) -> float:
        return max(self.L2V_right_left, self.L2V_linear_right, self.L2V_smooth_linear)

    def metrics(self) -> dict:
        keys = [
            "supU_right_left", "supU_linear_right", "supU_smooth_linear",
            "supW_right_left", "supW_linear_right", "supW_smooth_linear",
            "L1Z_right_left", "L1Z_linear_right", "L1Z_smooth_linear",
            "L2V_right_left", "L2V_linear_right", "L2V_smooth_linear",
            "L2V_rate_full", "L2V_rate_tail", "L2Ustar_rate",
            "head_supW_smooth_linear", "head_L2V_rate",
        ]
        return {k: getattr(self, k) for k in keys}


def _report_from_aggregates(agg: dict, head: dict, v0_U: float, v0_W: float, tau: float, eps: float) -> MismatchReport:
    max_U_all = max(agg["max_U_exit"], v0_U)
    max_W_all = max(agg["max_W_exit"], v0_W)
    return MismatchReport(
        tau=tau,
        eps=eps,
        supU_right_left=tau * agg["max_U_exit"],
        supU_linear_right=tau * agg["max_U_exit"],
        supU_smooth_linear=0.5 * tau * max_U_all,
        supW_right_left=tau * agg["max_W_exit"],
        supW_linear_right=tau * agg["max_W_exit"],
        supW_smooth_linear=0.5 * tau * max_W_all,
        L1Z_right_left=tau * tau * agg["sum_Z_exit"],
        L1Z_linear_right=0.5 * tau * tau * agg["sum_Z_exit"],
        L1Z_smooth_linear=agg["sum_L1Z_smooth"],
        L2V_right_left=float(np.sqrt(tau**3 * agg["sum_V2_exit"])),
        L2V_linear_right=float(np.sqrt(tau**3 / 3.0 * agg["sum_V2_exit"])),
        L2V_smooth_linear=float(np.sqrt(agg["sum_L2V2_smooth"])),
        L2V_rate_full=float(np.sqrt(agg["sum_rateV2"])),
        L2V_rate_tail=float(np.sqrt(max(agg["sum_rateV2"] - head["rateV2"], 0.0))),
        L2Ustar_rate=float(np.sqrt(agg["sum_rateU2"])),
        head_supW_smooth_linear=0.5 * tau * max(v0_W, head["W_exit"]),
        head_L2V_rate=float(np.sqrt(head["rateV2"])),
    )


def mismatch_report(traj: DiscreteTrajectory, visc_V: MetricOperator, norms: NormFamily) -> MismatchReport:
    """All mismatch metrics of a fully stored trajectory, in one vector pass."""
    if not traj.has_full:
        raise ValueError("mismatch_report needs full state storage; use MismatchAccumulator for long runs")
    tau, eps = traj.config.tau, traj.config.eps
    V1 = traj.v_full[:-1]
    V2 = traj.v_full[1:]
    agg = _cell_aggregates(V1, V2, tau, visc_V, norms)
    d1 = traj.v_full[1] - traj.v_full[0]
    head = {
        "rateV2": (tau / 3.0) * visc_V.quad(d1),
        "W_exit": norms.norm_W(traj.v_full[1]),
    }
    v0 = traj.v_full[0]
    return _report_from_aggregates(agg, head, norms.norm_U(v0), norms.norm_W(v0), tau, eps)


class MismatchAccumulator:
    """Observer computing the same mismatch metrics as mismatch_report while
    the run streams, for trajectories too long to store every state."""

    def __init__(self, visc_V: MetricOperator, norms: NormFamily):
        self.visc_V = visc_V
        self.norms = norms
        self.agg: dict = {}
        self.head: dict = {}
        self.tau = self.eps = 0.0
        self.v0_U = self.v0_W = 0.0

    def begin(self, config: SchemeConfig, u0: np.ndarray, v0: np.ndarray) -> None:
        self.tau, self.eps = config.tau, config.eps
        self.v0_U = self.norms.norm_U(v0)
        self.v0_W = self.norms.norm_W(v0)

    def on_step(self, k: int, t: float, u: np.ndarray, v: np.ndarray, v_prev: np.ndarray) -> None:
        inc = _cell_aggregates(v_prev[None, :], v[None, :], self.tau, self.visc_V, self.norms)
        _merge(self.agg, inc)
        if k == 1:
            self.head = {
                "rateV2": (self.tau / 3.0) * self.visc_V.quad(v - v_prev),
                "W_exit": self.norms.norm_W(v),
            }

    def report(self) -> MismatchReport:
        if not self.agg:
            raise ValueError("no steps observed")
        return _report_from_aggregates(self.agg, self.head, self.v0_U, self.v0_W, self.tau, self.eps)


# -- energy-dissipation ledger ------------------------------------------------


@dataclass(frozen=True)
class EnergyLedgerRow:
    """One window [t^m, t^n] of the discrete energy-dissipation inequality."""

    m: int
    n: int
    kinetic_m: float
    kinetic_n: float
    energy_m: float
    energy_n: float
    dissipation: float
    work: float
    lambda_remainder: float
    lhs: float
    rhs: float
    slack: float


@dataclass(eq=False)
class LedgerReport:
    """Inequality audit over every node pair, via the potential
    phi(k) = kinetic + energy + cumulative dissipation - work - remainder;
    the pair slack is phi(m) - phi(n), so one running-min scan covers all
    pairs exactly."""

    lam: float
    tol: float
    phi: np.ndarray = field(repr=False)
    kinetic: np.ndarray = field(repr=False)
    energy: np.ndarray = field(repr=False)
    dissipation_cum: np.ndarray = field(repr=False)
    work_cum: np.ndarray = field(repr=False)
    remainder_cum: np.ndarray = field(repr=False)
    min_pair_slack: float = 0.0
    worst_pair: tuple = (0, 0)
    scale: float = 1.0
    passed: bool = True
    rows: list = field(default_factory=list)

    def row(self, m: int, n: int) -> EnergyLedgerRow:
        if not 0 <= m <= n <= len(self.phi) - 1:
            raise ValueError(f"bad pair ({m}, {n})")
        diss = self.dissipation_cum[n] - self.dissipation_cum[m]
        wrk = self.work_cum[n] - self.work_cum[m]
        rem = self.remainder_cum[n] - self.remainder_cum[m]
        lhs = self.kinetic[n] + self.energy[n] + diss
        rhs = self.kinetic[m] + self.energy[m] + wrk + rem
        return EnergyLedgerRow(
            m=m, n=n,
            kinetic_m=float(self.kinetic[m]), kinetic_n=float(self.kinetic[n]),
            energy_m=float(self.energy[m]), energy_n=float(self.energy[n]),
            dissipation=float(diss), work=float(wrk), lambda_remainder=float(rem),
            lhs=float(lhs), rhs=float(rhs), slack=float(rhs - lhs),
        )


def audit_energy_inequality(
    traj: DiscreteTrajectory,
    lam: float,
    pairs: Sequence[tuple] | None = None,
    tol: float = 1e-9,
) -> LedgerReport:
    """Check the per-window energy-dissipation inequality for ALL node pairs.

    Materializes rows only for the requested pairs (default: the full window
    plus the worst pair); the all-pairs minimum slack comes from a linear scan.
    """
    if np.isnan(traj.Rstar_term[1:]).any():
        raise ValueError("ledger audit needs the dual dissipation column; rerun with collect='full'")
    tau = traj.config.tau
    D = np.cumsum(traj.R_eps_term + traj.Rstar_term)
    W = np.cumsum(traj.work)
    # remainder sums run over k = 1..n; index 0 holds |v^0|^2_W which is not a summand
    rem_terms = 0.5 * lam * tau * tau * traj.normW2_v
    rem_terms[0] = 0.0
    G = np.cumsum(rem_terms)
    phi = traj.kinetic + traj.energy + D - W - G
    N = len(phi) - 1
    run_min = np.minimum.accumulate(phi)
    # slack(m, n) = phi(m) - phi(n); for each n the worst m is the prefix argmin
    slack_vs_best = run_min[:-1] - phi[1:]
    if N >= 1:
        worst_n = int(np.argmin(slack_vs_best)) + 1
        worst_m = int(np.argmin(phi[:worst_n]))
        min_slack = float(phi[worst_m] - phi[worst_n])
    else:
        worst_m = worst_n = 0
        min_slack = 0.0
    scale = float(
        1.0
        + np.max(traj.kinetic + traj.energy)
        + (D[-1] - D[0])
        + np.max(np.abs(W))
        + abs(G[-1])
    )
    report = LedgerReport(
        lam=lam,
        tol=tol,
        phi=phi,
        kinetic=traj.kinetic,
        energy=traj.energy,
        dissipation_cum=D,
        work_cum=W,
        remainder_cum=G,
        min_pair_slack=min_slack,
        worst_pair=(worst_m, worst_n),
        scale=scale,
        passed=min_slack >= -tol * scale,
    )
    if pairs is None:
        pairs = [(0, N), (worst_m, worst_n)]
    report.rows = [report.row(m, n) for (m, n) in pairs]
    return report


def write_ledger_csv(report: LedgerReport, path, include_consecutive: bool = True) -> None:
    """ledger.csv with columns m,n,lhs,rhs,slack; consecutive windows plus the
    whole-run window."""
    N = len(report.phi) - 1
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["m", "n", "lhs", "rhs", "slack"])
        if include_consecutive:
            for k in range(1, N + 1):
                r = report.row(k - 1, k)
                out.writerow([r.m, r.n, repr(r.lhs), repr(r.rhs), repr(r.slack)])
        r = report.row(0, N)
        out.writerow([r.m, r.n, repr(r.lhs), repr(r.rhs), repr(r.slack)])


# -- uniform bounds -----------------------------------------------------------


@dataclass(frozen=True)
class BoundsReport:
    """The seven a-priori quantities controlled uniformly in (tau, eps)."""

    max_energy: float            # (i')
    max_state_U: float           # (ii')
    max_eps_rate_M: float        # (iii')
    total_rate_Z: float          # (iv')
    visc_dissipation: float      # (v')
    max_force_Ustar: float       # (vi')
    accel_Ustar_sq: float        # (vii')
    complete: bool = True

    LABELS = ("i'", "ii'", "iii'", "iv'", "v'", "vi'", "vii'")

    def as_tuple(self) -> tuple:
        return (
            self.max_energy, self.max_state_U, self.max_eps_rate_M,
            self.total_rate_Z, self.visc_dissipation,
            self.max_force_Ustar, self.accel_Ustar_sq,
        )


def uniform_bounds_report(traj: DiscreteTrajectory) -> BoundsReport:
    tau, eps = traj.config.tau, traj.config.eps
    dual_cols = not np.isnan(traj.xi_Ustar[1:]).any() if traj.n_steps >= 1 else True
    return BoundsReport(
        max_energy=float(traj.energy.max()),
        max_state_U=float(traj.normU_u.max()),
        max_eps_rate_M=float(np.sqrt(2.0 * traj.kinetic.max())),
        total_rate_Z=float(tau * traj.normZ_v[1:].sum()),
        visc_dissipation=float(eps * tau * traj.normV2_v[1:].sum()),
        max_force_Ustar=float(np.nanmax(traj.xi_Ustar[1:])) if dual_cols else float("nan"),
        accel_Ustar_sq=float(tau * traj.acc_Ustar2[1:].sum()) if dual_cols else float("nan"),
        complete=dual_cols,
    )


def write_bounds_csv(entries: Iterable[tuple], path) -> None:
    """bounds.csv rows (run-id, i'..vii'); entries are (run_id, BoundsReport)."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["run-id", *BoundsReport.LABELS])
        for run_id, rep in entries:
            out.writerow([run_id, *[repr(x) for x in rep.as_tuple()]])


def write_mismatch_csv(entries: Iterable[MismatchReport], path) -> None:
    """mismatch.csv rows (metric, value, tau, eps)."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["metric", "value", "tau", "eps"])
        for rep in entries:
            for name, value in rep.metrics().items():
                out.writerow([name, repr(value), repr(rep.tau), repr(rep.eps)])


# -- node inequalities for the smoothed interpolant ---------------------------


@dataclass(frozen=True)
class NodeInequalityReport:
    """Window checks comparing dissipation integrals of the smoothed rate
    against the piecewise-constant rate plus its boundary remainder."""

    worst_margin_R: float
    worst_margin_V: float
    scale_R: float
    scale_V: float
    passed: bool


def node_inequality_report(
    traj: DiscreteTrajectory,
    pot: DissipationPotential,
    visc_V: MetricOperator,
    tol: float = 1e-9,
) -> NodeInequalityReport:
    """Over every node window [t^m, t^n]:
    int R(smoothed_rate) <= int R(linear_rate) + (tau/2) R(v^m), and the same
    for the squared V-norm with remainder (tau/2)|v^m|_V^2. Exact per-cell
    integrals; margins are inequality violations (positive = violated)."""
    if not traj.has_full:
        raise ValueError("node inequality check needs full state storage")
    tau = traj.config.tau
    V1 = traj.v_full[:-1]
    V2 = traj.v_full[1:]
    D = V2 - V1
    # per-cell int of R(v1 + (s/tau) dv) minus tau R(v^k)
    cell_R = (_abs_int_linear(V1, D, tau) * pot.w).sum(axis=1) - tau * traj.R_rate[1:]
    # per-cell int of |v1 + (s/tau) dv|_V^2 minus tau |v^k|_V^2
    qV1 = visc_V.quad_batch(V1)
    qV2 = visc_V.quad_batch(V2)
    cross = np.einsum("ij,ij->i", visc_V.apply_batch(V1), V2)
    cell_V = (tau / 3.0) * (qV1 + cross + qV2) - tau * qV2
    psi_R = np.concatenate([[0.0], np.cumsum(cell_R)])
    psi_V = np.concatenate([[0.0], np.cumsum(cell_V)])
    # worst over all windows: max_m [ max_{n>=m} psi(n) - psi(m) - boundary(m) ]
    suffix_R = np.maximum.accumulate(psi_R[::-1])[::-1]
    suffix_V = np.maximum.accumulate(psi_V[::-1])[::-1]
    bound_R = 0.5 * tau * traj.R_rate
    bound_V = 0.5 * tau * traj.normV2_v
    worst_R = float((suffix_R - psi_R - bound_R).max())
    worst_V = float((suffix_V - psi_V - bound_V).max())
    scale_R = float(1.0 + tau * traj.R_rate[1:].sum())
    scale_V = float(1.0 + tau * traj.normV2_v[1:].sum())
    return NodeInequalityReport(
        worst_margin_R=worst_R,
        worst_margin_V=worst_V,
        scale_R=scale_R,
        scale_V=scale_V,
        passed=(worst_R <= tol * scale_R and worst_V <= tol * scale_V),
    )


# -- defect measure ledger ----------------------------------------------------


@dataclass(frozen=True)
class DefectLedger:
    """Interval defect measure of a (near-)limit trajectory.

    mu([s,t]) = E(s, u(s)) - E(t, u(t)) + work(s,t), atoms sit on detected
    jump windows, and the diffuse remainder is compared to the R-variation of
    the continuous part.
    """

    intervals: list          # (k_lo, k_hi, mu, kind) with kind "segment"/"jump"
    atoms: list              # (t_star, atom_value, R_of_jump)
    diffuse_total: float
    vr_continuous: float
    diffuse_mismatch: float
    scale: float
    min_interval_mu: float
    passed_nonneg: bool
    passed_atoms_lower: bool


def build_defect_ledger(
    traj: DiscreteTrajectory,
    pot: DissipationPotential,
    model: EnergyModel,
    jump_list: Sequence,
    tol: float = 1e-6,
) -> DefectLedger:
    """Partition [0, T] by the detected jump windows and account the defect.

    jump_list entries need window_k = (k1, k2) node indices plus t_star,
    u_minus, u_plus (the jumps module's records qualify)."""
    N = traj.n_steps
    W = np.cumsum(traj.work)
    E = traj.energy

    def mu(m: int, n: int) -> float:
        return float(E[m] - E[n] + (W[n] - W[m]))

    windows = sorted((int(j.window_k[0]), int(j.window_k[1])) for j in jump_list)
    for (a1, b1), (a2, b2) in zip(windows, windows[1:]):
        if a2 < b1:
            raise ValueError("jump windows overlap")
    intervals = []
    atoms = []
    cursor = 0
    vr_cont = 0.0
    tau = traj.config.tau
    for j in sorted(jump_list, key=lambda j: j.window_k[0]):
        k1, k2 = int(j.window_k[0]), int(j.window_k[1])
        if cursor < k1:
            intervals.append((cursor, k1, mu(cursor, k1), "segment"))
            vr_cont += tau * float(traj.R_rate[cursor + 1 : k1 + 1].sum())
        atom = mu(k1, k2)
        intervals.append((k1, k2, atom, "jump"))
        atoms.append((float(j.t_star), atom, pot.R(np.asarray(j.u_plus) - np.asarray(j.u_minus))))
        cursor = k2
    if cursor < N:
        intervals.append((cursor, N, mu(cursor, N), "segment"))
        vr_cont += tau * float(traj.R_rate[cursor + 1 : N + 1].sum())
    diffuse = float(sum(m for (_, _, m, kind) in intervals if kind == "segment"))
    scale = float(1.0 + np.abs(E).max() + np.abs(W).max())
    min_mu = float(min((m for (_, _, m, _) in intervals), default=0.0))
    atoms_ok = all(a >= r - tol * scale for (_, a, r) in atoms)
    return DefectLedger(
        intervals=intervals,
        atoms=atoms,
        diffuse_total=diffuse,
        vr_continuous=vr_cont,
        diffuse_mismatch=abs(diffuse - vr_cont),
        scale=scale,
        min_interval_mu=min_mu,
        passed_nonneg=min_mu >= -tol * scale,
        passed_atoms_lower=atoms_ok,
    )


# -- common-grid sampling -----------------------------------------------------


class GridSampler:
    """Observer sampling the piecewise-linear interpolant on a fixed uniform
    grid while the run streams; grids are comparable across different tau."""

    def __init__(self, n_points: int = 1025):
        if n_points < 2:
            raise ValueError("need at least 2 grid points")
        self.n_points = n_points
        self.times: np.ndarray | None = None
        self.values: np.ndarray | None = None
        self._ptr = 1
        self._tau = 0.0

    def begin(self, config: SchemeConfig, u0: np.ndarray, v0: np.ndarray) -> None:
        self.times = np.linspace(0.0, config.T, self.n_points)
        self.values = np.empty((self.n_points, u0.size))
        self.values[0] = u0
        self._ptr = 1
        self._tau = config.tau

    def on_step(self, k: int, t: float, u: np.ndarray, v: np.ndarray, v_prev: np.ndarray) -> None:
        fuzz = 1e-9 * self._tau
        while self._ptr < self.n_points and self.times[self._ptr] <= t + fuzz:
            sigma = self.times[self._ptr] - (t - self._tau)
            self.values[self._ptr] = u - (self._tau - sigma) * v
            self._ptr += 1

    def end(self, u_final: np.ndarray, v_final: np.ndarray) -> None:
        while self._ptr < self.n_points:
            self.values[self._ptr] = u_final
            self._ptr += 1

    @property
    def complete(self) -> bool:
        return self.values is not None and self._ptr >= self.n_points
