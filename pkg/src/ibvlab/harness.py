"""Config-driven assembly: parse flat configs, build problems, run and sweep,
classify the computed evolution, and write the artifact CSVs.

Configs are flat `key = value` lines with dotted keys. Unknown keys are
errors, not warnings, and every default is echoed back into the manifest so
a run directory records the complete parameter set that produced it.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .diagnostics import (
    BoundsReport,
    DefectLedger,
    GridSampler,
    LedgerReport,
    MismatchAccumulator,
    MismatchReport,
    NodeInequalityReport,
    audit_energy_inequality,
    build_defect_ledger,
    node_inequality_report,
    uniform_bounds_report,
    write_bounds_csv,
    write_ledger_csv,
    write_mismatch_csv,
)
from .dissipation import DissipationPotential
from .energy import (
    DoubleWellEnergy,
    EnergyModel,
    QuadraticEnergy,
    ScalarToyEnergy,
    double_well,
    double_well_prime,
)
from .jumps import (
    AdmissibilityReport,
    CostEstimate,
    JumpRecord,
    ReconcileVerdict,
    TransitionPath,
    certify_admissibility,
    detect_jumps,
    reconcile_jump,
    solve_transition,
    write_jumps_csv,
    write_transition_csv,
)
from .spaces import (
    DiscreteSpace,
    MetricOperator,
    NormFamily,
    dirichlet_laplacian,
    lumped_mass,
)
from .stepper import DiscreteTrajectory, InnerParams, SchemeConfig, run_trajectory


class ConfigError(ValueError):
    """Raised on unknown keys, bad values, or inconsistent settings."""


def _as_float(s: str) -> float:
    return float(s)


def _as_int(s: str) -> int:
    return int(s)


def _as_str(s: str) -> str:
    return s


def _as_float_list(s: str) -> tuple:
    s = s.strip()
    if not s:
        return ()
    return tuple(float(p) for p in s.split(","))


MODEL_KINDS = ("play", "double-well-scalar", "double-well-chain", "convex-flat")

# key -> (converter, default, allowed values or None)
_KNOWN: dict = {
    "model.kind": (_as_str, "", MODEL_KINDS),
    "model.rho": (_as_float, 1.0, None),
    "model.nu": (_as_float, 0.2, None),
    "model.n": (_as_int, 64, None),
    "model.length": (_as_float, 10.0, None),
    "model.load_rate": (_as_float, 1.0, None),
    "model.load_offset": (_as_float, 0.0, None),
    "model.load_step": (_as_float, 0.0, None),
    "model.load_step_time": (_as_float, 0.5, None),
    "model.load_hold": (_as_float, float("inf"), None),
    "model.load_shape": (_as_str, "bump", ("bump", "uniform")),
    "model.u0": (_as_float, 0.0, None),
    "model.case": (_as_str, "A", ("A", "B")),
    "model.state_box": (_as_float, 0.0, None),
    "scheme.eps": (_as_float, 1e-2, None),
    "scheme.tau": (_as_float, 1e-4, None),
    "scheme.T": (_as_float, 1.0, None),
    "scheme.u1_mode": (_as_str, "zero", ("zero", "inv-sqrt-eps")),
    "scheme.u1_value": (_as_float, 0.0, None),
    "scheme.collect": (_as_str, "auto", ("auto", "full", "light")),
    "scheme.inner_tol": (_as_float, 1e-11, None),
    "scheme.max_iter": (_as_int, 500, None),
    "sweep.eps": (_as_float_list, (), None),
    "sweep.tau": (_as_float_list, (), None),
    "jump.threshold": (_as_float, 25.0, None),
    "jump.sigma": (_as_float, 0.0, None),
    "jump.tau_prime": (_as_float, 0.0, None),
    "jump.alpha": (_as_float, 0.0, None),
    "jump.beta": (_as_float, 1e-3, None),
    "jump.reconcile_tol": (_as_float, 0.05, None),
    "io.out_dir": (_as_str, "out", None),
    "io.seed": (_as_int, 0, None),
}


@dataclass(frozen=True, eq=False)
class Config:
    """Fully resolved parameter set: every known key has a value."""

    values: dict
    explicit: frozenset
    source: str = "<config>"

    def get(self, key: str):
        return self.values[key]

    def with_overrides(self, overrides: dict) -> "Config":
        for k in overrides:
            if k not in _KNOWN:
                raise ConfigError(f"unknown key '{k}'")
        vals = dict(self.values)
        vals.update(overrides)
        return Config(values=vals, explicit=self.explicit | frozenset(overrides), source=self.source)

    def manifest(self) -> str:
        lines = []
        for k in sorted(self.values):
            v = self.values[k]
            if isinstance(v, float):
                txt = repr(v)
            elif isinstance(v, tuple):
                txt = ",".join(repr(float(x)) for x in v)
            else:
                txt = str(v)
            lines.append(f"{k} = {txt}")
        return "\n".join(lines) + "\n"


def parse_config(text: str, source: str = "<config>") -> Config:
    """Parse `key = value` lines. Comments start with '#'. Unknown keys,
    duplicate keys, bad values, and out-of-range enums raise ConfigError
    with the offending line number."""
    values = {k: d for k, (_, d, _) in _KNOWN.items()}
    explicit: set = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _KNOWN:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        if key in explicit:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        conv, _, allowed = _KNOWN[key]
        try:
            parsed = conv(val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for '{key}': {val!r}") from exc
        if allowed is not None and parsed not in allowed:
            raise ConfigError(
                f"{source}:{lineno}: '{key}' must be one of {', '.join(allowed)}, got {parsed!r}"
            )
        values[key] = parsed
        explicit.add(key)
    if "model.kind" not in explicit:
        raise ConfigError(f"{source}: missing required key 'model.kind'")
    return Config(values=values, explicit=frozenset(explicit), source=source)


def parse_config_file(path) -> Config:
    path = Path(path)
    return parse_config(path.read_text(), source=str(path))


def flat_well(x: float) -> float:
    """Convex onsite potential with a flat segment on [0, 1]."""
    x = float(x)
    if x < 0.0:
        return 0.5 * x * x
    if x <= 1.0:
        return 0.0
    return 0.5 * (x - 1.0) ** 2


def flat_well_prime(x: float) -> float:
    x = float(x)
    if x < 0.0:
        return x
    if x <= 1.0:
        return 0.0
    return x - 1.0


@dataclass(eq=False)
class Problem:
    """Everything one run needs, assembled from a Config."""

    config: Config
    model: EnergyModel
    pot: DissipationPotential
    mass_M: MetricOperator
    visc_V: MetricOperator
    norms: NormFamily
    scheme: SchemeConfig

    @property
    def space(self) -> DiscreteSpace:
        return self.model.space


def _resolve_collect(config: Config, n: int) -> str:
    mode = config.get("scheme.collect")
    if mode != "auto":
        return mode
    n_steps = round(config.get("scheme.T") / config.get("scheme.tau"))
    return "full" if (n_steps + 1) * n <= 4_000_000 else "light"


def build_problem(config: Config) -> Problem:
    """Instantiate model, dissipation, metrics, and scheme from a Config."""
    kind = config.get("model.kind")
    if kind not in MODEL_KINDS:
        raise ConfigError(f"model.kind must be one of {', '.join(MODEL_KINDS)}")
    rate = config.get("model.load_rate")
    off = config.get("model.load_offset")
    step = config.get("model.load_step")
    t_step = config.get("model.load_step_time")
    rho = config.get("model.rho")
    T = config.get("scheme.T")
    box_cfg = config.get("model.state_box")

    # Scalar kinds share one load, piecewise if asked: a ramp optionally
    # saturating at load_hold, plus an optional step at t_step. A ramp held
    # just above the friction threshold is what walks a convex energy across
    # its flat segment at bounded driving force.
    hold = config.get("model.load_hold")

    def load_at(t: float) -> float:
        base = min(rate * t + off, hold)
        return base + step if step != 0.0 and t >= t_step else base

    # absolutely continuous part only; the step is carried by differences
    def load_rate_at(t: float) -> float:
        return 0.0 if rate * t + off >= hold else rate

    if kind in ("play", "double-well-scalar", "convex-flat"):
        n = 1
        space = DiscreteSpace(1, 1.0)
        pot = DissipationPotential(np.array([rho]))
    else:
        n = config.get("model.n")
        length = config.get("model.length")
        space = DiscreteSpace(n, length / (n + 1))
        pot = DissipationPotential.uniform(n, config.get("model.nu"), space.h)

    if kind == "play":
        box = box_cfg if box_cfg > 0 else max(8.0, 2.0 * (abs(rate) * T + abs(off) + abs(step)) + 4.0)
        stiff = MetricOperator.identity(1, 1.0)
        model: EnergyModel = QuadraticEnergy(
            space,
            stiff,
            f=lambda t: np.array([load_at(t)]),
            fdot=lambda t: np.array([load_rate_at(t)]),
            state_box=box,
        )
    elif kind == "double-well-scalar":
        box = box_cfg if box_cfg > 0 else 2.5
        model = ScalarToyEnergy(
            double_well,
            double_well_prime,
            f=load_at,
            fdot=load_rate_at,
            lam=1.0,
            curvature_const=max(3.0 * box * box - 1.0, 1.0),
            state_box=box,
        )
    elif kind == "convex-flat":
        box = box_cfg if box_cfg > 0 else max(4.0, 2.0 * (abs(rate) * T + abs(off) + abs(step)) + 3.0)
        model = ScalarToyEnergy(
            flat_well,
            flat_well_prime,
            f=load_at,
            fdot=load_rate_at,
            lam=0.0,
            curvature_const=1.0,
            state_box=box,
        )
    else:
        box = box_cfg if box_cfg > 0 else 2.5
        x = (np.arange(n) + 1.0) * space.h
        length = config.get("model.length")
        if config.get("model.load_shape") == "bump":
            profile = np.sin(np.pi * x / length)
        else:
            profile = np.ones(n)
        model = DoubleWellEnergy(
            space,
            load=lambda t: profile * (rate * t + off),
            load_rate=lambda t: profile * rate,
            state_box=box,
        )

    mass_M = lumped_mass(space)
    if config.get("model.case") == "A":
        visc_V = MetricOperator.identity(n, space.h)
    else:
        visc_V = dirichlet_laplacian(space)
    norms = NormFamily.build(space, mass_M, visc_V)

    eps = config.get("scheme.eps")
    u0 = np.full(n, config.get("model.u0"), dtype=float)
    if config.get("scheme.u1_mode") == "zero":
        u1 = None
    else:
        u1 = np.full(n, config.get("scheme.u1_value"), dtype=float) / np.sqrt(eps)
    inner = InnerParams(tol=config.get("scheme.inner_tol"), max_iter=config.get("scheme.max_iter"))
    scheme = SchemeConfig(
        eps=eps,
        tau=config.get("scheme.tau"),
        T=T,
        u0=u0,
        u1=u1,
        inner=inner,
        collect=_resolve_collect(config, n),
    )
    return Problem(config=config, model=model, pot=pot, mass_M=mass_M,
                   visc_V=visc_V, norms=norms, scheme=scheme)


def play_oracle(rho: float, f: Callable[[float], float], u0: float, t) -> np.ndarray:
    """Exact scalar play output on the sampled grid: the state is clipped
    into the moving interval [f - rho, f + rho] node by node. Exact for
    piecewise monotone loads sampled at their turning points. The initial
    state must already lie in the interval at t[0]."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    f0 = float(f(t[0]))
    if not (f0 - rho <= u0 + 1e-12 and u0 <= f0 + rho + 1e-12):
        raise ValueError("initial state is not stable under the load at t[0]")
    out = np.empty(t.shape)
    cur = float(u0)
    for i, ti in enumerate(t):
        fi = float(f(ti))
        cur = min(max(cur, fi - rho), fi + rho)
        out[i] = cur
    return out


@dataclass(frozen=True)
class ClassificationReport:
    """Which solution notion the computed evolution exhibits.

    Checked in order classic -> energetic -> rate-independent-with-jump-cost
    ("IBV") -> none; the first notion whose certificate holds wins. The
    first-order tolerances absorb the O(eps) viscous and inertial forces a
    finite-eps run carries at continuity points."""

    label: str
    classic_defect: float
    classic_tol: float
    atom_worst: float
    global_worst: float
    lambda_worst: float
    first_order_worst: float
    jumps_found: int
    reconcile_all_pass: bool
    checked_nodes: tuple


def _probe_states(u: np.ndarray, box: float, n_probes: int, rng: np.random.Generator) -> np.ndarray:
    n = u.size
    if n == 1:
        return np.linspace(-box, box, n_probes)[:, None]
    dirs = rng.standard_normal((n_probes, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    scales = np.exp(rng.uniform(np.log(1e-2), np.log(2.0 * box), size=(n_probes, 1)))
    return np.clip(u[None, :] + scales * dirs, -box, box)


def _continuity_nodes(traj: DiscreteTrajectory, jumps: Sequence, n_nodes: int) -> list:
    if traj.has_full:
        avail = list(range(traj.n_steps + 1))
    else:
        avail = sorted(traj.snap_ks)
    idx = np.unique(np.linspace(0, len(avail) - 1, n_nodes).round().astype(int))
    ks = [avail[i] for i in idx]
    out = []
    for k in ks:
        interior = any(j.window_k[0] < k < j.window_k[1] for j in jumps)
        if not interior:
            out.append(k)
    return out


def classify_solution(
    traj: DiscreteTrajectory,
    model: EnergyModel,
    pot: DissipationPotential,
    jumps: Sequence,
    verdicts: Sequence,
    defect: DefectLedger | None = None,
    tol: float = 1e-6,
    atom_tol: float = 0.02,
    classic_tol: float | None = None,
    n_time_probes: int = 9,
    n_state_probes: int = 161,
    seed: int = 0,
) -> ClassificationReport:
    """Decide classic / energetic / IBV / none for a computed run.

    classic: no jump windows and the force membership -xi in dR(v) holds at
    the sampled nodes up to the eps-force allowance. energetic: every defect
    atom equals the friction of its jump (within atom_tol) and the sampled
    continuity states are globally stable with no quadratic correction.
    IBV: the sampled states are lambda-stable and every jump's certified
    transition cost reconciles with its drop."""
    eps = traj.config.eps
    tau = traj.config.tau
    rng = np.random.default_rng(seed)
    # Rate scale for the eps-force allowance, taken away from jump windows so
    # a fast transition does not inflate the tolerance at continuity points.
    rate_mask = np.ones(traj.normV2_v.size, dtype=bool)
    for j in jumps:
        k1, k2 = j.window_k
        rate_mask[max(k1 + 1, 0): min(k2 + 1, rate_mask.size)] = False
    masked = traj.normV2_v[rate_mask]
    max_rate_V = float(np.sqrt(np.nanmax(masked))) if masked.size else 0.0
    if classic_tol is None:
        classic_tol = 3.0 * eps * (1.0 + max_rate_V) + 1e-8
    ks = _continuity_nodes(traj, jumps, n_time_probes)
    w = pot.w

    classic_defect = 0.0
    first_order_worst = -np.inf
    states = []
    for k in ks:
        t = k * tau
        u = traj.state(k)
        v = traj.rate(k)
        xi = model.grad(t, u)
        box_gap = float(max(0.0, (np.abs(xi) - w).max()))
        rv = pot.R(v)
        comp_gap = abs(float(-xi @ v) - rv) / (1.0 + rv)
        classic_defect = max(classic_defect, box_gap, comp_gap)
        first_order_worst = max(first_order_worst, float((np.abs(xi) - w).max()))
        states.append((k, t, u))

    if not jumps and classic_defect <= classic_tol:
        return ClassificationReport(
            label="classic", classic_defect=classic_defect, classic_tol=classic_tol,
            atom_worst=0.0, global_worst=np.inf, lambda_worst=np.inf,
            first_order_worst=first_order_worst, jumps_found=0,
            reconcile_all_pass=True, checked_nodes=tuple(ks),
        )

    atom_worst = 0.0
    if defect is not None:
        for _, mu_a, r_a in defect.atoms:
            atom_worst = max(atom_worst, abs(mu_a - r_a) / (1.0 + r_a))

    box = getattr(model, "state_box", 2.5)
    stab_tol = max(tol, classic_tol)
    global_worst = np.inf
    lambda_worst = np.inf
    for k, t, u in states:
        probes = _probe_states(u, box, n_state_probes, rng)
        eu = model.value(t, u)
        du = probes - u[None, :]
        r_terms = np.abs(du) @ w
        e_terms = np.array([model.value(t, x) for x in probes])
        w2 = model.space.h * np.einsum("ij,ij->i", du, du)
        g_margins = e_terms + r_terms - eu
        l_margins = g_margins + 0.5 * model.lam * w2
        global_worst = min(global_worst, float(g_margins.min()))
        lambda_worst = min(lambda_worst, float(l_margins.min()))

    energy_scale = 1.0 + float(np.nanmax(np.abs(traj.energy)))
    if atom_worst <= atom_tol and global_worst >= -stab_tol * energy_scale and first_order_worst <= stab_tol:
        return ClassificationReport(
            label="energetic", classic_defect=classic_defect, classic_tol=classic_tol,
            atom_worst=atom_worst, global_worst=global_worst, lambda_worst=lambda_worst,
            first_order_worst=first_order_worst, jumps_found=len(jumps),
            reconcile_all_pass=all(v.passed for v in verdicts) if verdicts else True,
            checked_nodes=tuple(ks),
        )

    reconcile_ok = bool(verdicts) and all(v.passed for v in verdicts)
    if not jumps:
        reconcile_ok = True
    if lambda_worst >= -stab_tol * energy_scale and first_order_worst <= stab_tol and reconcile_ok:
        label = "IBV"
    else:
        label = "none"
    return ClassificationReport(
        label=label, classic_defect=classic_defect, classic_tol=classic_tol,
        atom_worst=atom_worst, global_worst=global_worst, lambda_worst=lambda_worst,
        first_order_worst=first_order_worst, jumps_found=len(jumps),
        reconcile_all_pass=reconcile_ok, checked_nodes=tuple(ks),
    )


@dataclass(eq=False)
class RunResult:
    """One run plus every audit derived from it."""

    problem: Problem
    traj: DiscreteTrajectory
    bounds: BoundsReport
    mismatch: MismatchReport
    ledger: LedgerReport | None
    node_ineq: NodeInequalityReport | None
    defect: DefectLedger | None
    jumps: list
    transitions: list
    costs: list
    admissibility: list
    verdicts: list
    classification: ClassificationReport
    grid_times: np.ndarray
    grid_values: np.ndarray
    wall_time: float

    def summary_lines(self) -> list:
        lines = [
            f"steps: {self.traj.n_steps}  n: {self.traj.n}  wall: {self.wall_time:.3f}s",
            f"classification: {self.classification.label}",
        ]
        b = self.bounds
        lines.append(
            "bounds (i'-vii'): "
            + "  ".join(f"{lbl}={val:.6g}" for lbl, val in zip(BoundsReport.LABELS, b.as_tuple()))
        )
        if self.ledger is not None:
            lines.append(
                f"ledger: min pair slack {self.ledger.min_pair_slack:.3e}"
                f" (scale {self.ledger.scale:.3g}) -> {'PASS' if self.ledger.passed else 'FAIL'}"
            )
        if self.node_ineq is not None:
            lines.append(
                f"node inequalities: worst margins R {self.node_ineq.worst_margin_R:.3e},"
                f" V {self.node_ineq.worst_margin_V:.3e}"
                f" -> {'PASS' if self.node_ineq.passed else 'FAIL'}"
            )
        for jump, cost, verdict in zip(self.jumps, self.costs, self.verdicts):
            lines.append(
                f"jump at t*={jump.t_star:.6g}: drop {verdict.drop:.6g},"
                f" cost {cost.value:.6g} -> {'PASS' if verdict.passed else 'FAIL'}"
            )
        if not self.jumps:
            lines.append("jumps: none detected")
        return lines


def run_single(
    config: Config,
    progress: Callable | None = None,
    do_jumps: bool = True,
    grid_points: int = 1025,
) -> RunResult:
    """Build, run, and audit one configuration end to end."""
    problem = build_problem(config)
    sampler = GridSampler(grid_points)
    acc = MismatchAccumulator(problem.visc_V, problem.norms)
    t0 = time.perf_counter()
    traj = run_trajectory(
        problem.model, problem.pot, problem.mass_M, problem.visc_V,
        problem.scheme, norms=problem.norms, observers=(sampler, acc),
        progress=progress,
    )
    wall = time.perf_counter() - t0
    bounds = uniform_bounds_report(traj)
    mismatch = acc.report()
    ledger = None
    node_ineq = None
    if traj.config.collect == "full":
        ledger = audit_energy_inequality(traj, problem.model.lam)
    if traj.has_full:
        node_ineq = node_inequality_report(traj, problem.pot, problem.visc_V)

    jumps: list = []
    transitions: list = []
    costs: list = []
    adms: list = []
    verdicts: list = []
    if do_jumps:
        jumps = detect_jumps(traj, problem.pot, threshold=config.get("jump.threshold"), model=problem.model)
        sigma_cfg = config.get("jump.sigma")
        taup_cfg = config.get("jump.tau_prime")
        for jump in jumps:
            path, cost = solve_transition(
                problem.model, problem.pot, problem.mass_M, problem.visc_V, jump,
                sigma=sigma_cfg if sigma_cfg > 0 else None,
                tau_prime=taup_cfg if taup_cfg > 0 else None,
                beta=config.get("jump.beta"),
                norms=problem.norms,
            )
            # The run hands the transition a nonzero entry rate, so the path
            # is admissible only at levels at least that coarse. The level
            # shrinks linearly with eps; certify at it and report it.
            beta_eff = max(config.get("jump.beta"), 1.25 * path.v_start_norm_V)
            adm = certify_admissibility(
                path, problem.pot, problem.model,
                alpha=config.get("jump.alpha"), beta=beta_eff,
                bound_const=bounds.total_rate_Z,
            )
            verdict = reconcile_jump(jump, cost, tol_rel=config.get("jump.reconcile_tol"))
            if not adm.passed:
                verdict = ReconcileVerdict(
                    passed=False, cost=verdict.cost, drop=verdict.drop,
                    rel_err=verdict.rel_err, used_path_drop=verdict.used_path_drop,
                )
            transitions.append(path)
            costs.append(cost)
            adms.append(adm)
            verdicts.append(verdict)

    defect = build_defect_ledger(traj, problem.pot, problem.model, jumps)
    classification = classify_solution(
        traj, problem.model, problem.pot, jumps, verdicts, defect,
        seed=config.get("io.seed"),
    )
    return RunResult(
        problem=problem, traj=traj, bounds=bounds, mismatch=mismatch,
        ledger=ledger, node_ineq=node_ineq, defect=defect, jumps=jumps,
        transitions=transitions, costs=costs, admissibility=adms,
        verdicts=verdicts, classification=classification,
        grid_times=sampler.times, grid_values=sampler.values, wall_time=wall,
    )


@dataclass(frozen=True)
class SweepPlan:
    """Explicit (eps, tau) pairs run against a shared base config."""

    base: Config
    pairs: tuple
    grid_points: int = 1025
    collect: str = "auto"

    @staticmethod
    def from_config(config: Config) -> "SweepPlan":
        eps_list = config.get("sweep.eps") or (config.get("scheme.eps"),)
        tau_list = config.get("sweep.tau") or (config.get("scheme.tau"),)
        if len(eps_list) == 1 and len(tau_list) > 1:
            pairs = tuple((eps_list[0], t) for t in tau_list)
        elif len(tau_list) == 1 and len(eps_list) > 1:
            pairs = tuple((e, tau_list[0]) for e in eps_list)
        elif len(eps_list) == len(tau_list):
            pairs = tuple(zip(eps_list, tau_list))
        else:
            raise ConfigError("sweep.eps and sweep.tau lengths are incompatible")
        # a sweep approximates a limit only when it refines
        ratios = [t / e for e, t in pairs]
        for a, b in zip(ratios[:-1], ratios[1:]):
            if b >= a:
                raise ConfigError(
                    "sweep does not refine: tau/eps must decrease along the plan "
                    f"(regime violation: ratio {b:g} follows {a:g})"
                )
        return SweepPlan(base=config, pairs=pairs)


@dataclass(eq=False)
class SweepEntry:
    eps: float
    tau: float
    n_steps: int
    bounds: BoundsReport
    mismatch: MismatchReport
    min_slack: float
    ledger_scale: float
    grid_values: np.ndarray
    wall_time: float


@dataclass(eq=False)
class SweepResult:
    plan: SweepPlan
    entries: list
    grid_times: np.ndarray
    distances: list
    contraction_ok: bool


def _sweep_one(plan: SweepPlan, eps: float, tau: float) -> SweepEntry:
    cfg = plan.base.with_overrides({"scheme.eps": eps, "scheme.tau": tau, "scheme.collect": plan.collect})
    problem = build_problem(cfg)
    sampler = GridSampler(plan.grid_points)
    acc = MismatchAccumulator(problem.visc_V, problem.norms)
    t0 = time.perf_counter()
    traj = run_trajectory(
        problem.model, problem.pot, problem.mass_M, problem.visc_V,
        problem.scheme, norms=problem.norms, observers=(sampler, acc),
    )
    wall = time.perf_counter() - t0
    bounds = uniform_bounds_report(traj)
    if traj.config.collect == "full":
        ledger = audit_energy_inequality(traj, problem.model.lam)
        min_slack, scale = ledger.min_pair_slack, ledger.scale
    else:
        min_slack, scale = float("nan"), float("nan")
    return SweepEntry(
        eps=eps, tau=tau, n_steps=traj.n_steps, bounds=bounds,
        mismatch=acc.report(), min_slack=min_slack, ledger_scale=scale,
        grid_values=sampler.values, wall_time=wall,
    )


def run_sweep(plan: SweepPlan, progress: Callable | None = None) -> SweepResult:
    """Run every pair, then compare successive runs on the common grid.

    IBV_WORKERS > 1 runs entries in a thread pool; results are aggregated in
    plan order either way, so output is deterministic."""
    workers = int(os.environ.get("IBV_WORKERS", "1") or "1")
    entries: list = [None] * len(plan.pairs)
    if workers > 1 and len(plan.pairs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = {pool.submit(_sweep_one, plan, e, t): i for i, (e, t) in enumerate(plan.pairs)}
            for fut, i in futs.items():
                entries[i] = fut.result()
                if progress is not None:
                    progress(i, entries[i])
    else:
        for i, (e, t) in enumerate(plan.pairs):
            entries[i] = _sweep_one(plan, e, t)
            if progress is not None:
                progress(i, entries[i])

    base_problem = build_problem(plan.base)
    norms = base_problem.norms
    T = plan.base.get("scheme.T")
    grid_times = np.linspace(0.0, T, plan.grid_points)
    dt = grid_times[1] - grid_times[0]
    distances = []
    for a, b in zip(entries[:-1], entries[1:]):
        diff = a.grid_values - b.grid_values
        d_supW = float(norms.norm_W_batch(diff).max())
        z = norms.norm_Z_batch(diff)
        d_L1Z = float(dt * (z.sum() - 0.5 * (z[0] + z[-1])))
        distances.append({
            "eps": a.eps, "tau": a.tau, "eps_next": b.eps, "tau_next": b.tau,
            "supW": d_supW, "L1Z": d_L1Z,
        })
    contraction_ok = True
    for prev, cur in zip(distances[:-1], distances[1:]):
        for key in ("supW", "L1Z"):
            if cur[key] > 0.7 * prev[key] + 1e-12 * (1.0 + prev[key]):
                contraction_ok = False
    return SweepResult(plan=plan, entries=entries, grid_times=grid_times,
                       distances=distances, contraction_ok=contraction_ok)


def loglog_slope(xs: Sequence, ys: Sequence) -> float:
    """Least-squares slope of log y against log x."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if (xs <= 0).any() or (ys <= 0).any():
        return float("nan")
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def write_run_artifacts(result: RunResult, out_dir) -> dict:
    """Write manifest + CSVs for one run; returns the path of each artifact."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    man = out / "manifest.cfg"
    man.write_text(result.problem.config.manifest())
    paths["manifest"] = man

    bp = out / "bounds.csv"
    write_bounds_csv([("run", result.bounds)], bp)
    paths["bounds"] = bp

    mp = out / "mismatch.csv"
    write_mismatch_csv([result.mismatch], mp)
    paths["mismatch"] = mp

    if result.ledger is not None:
        lp = out / "ledger.csv"
        write_ledger_csv(result.ledger, lp)
        paths["ledger"] = lp

    jp = out / "jumps.csv"
    write_jumps_csv(list(zip(result.jumps, result.costs, result.verdicts)), jp)
    paths["jumps"] = jp

    for i, path_obj in enumerate(result.transitions):
        tp = out / f"transition_{i}.csv"
        write_transition_csv(path_obj, tp)
        paths[f"transition_{i}"] = tp

    sp = out / "samples.csv"
    with open(sp, "w", newline="") as fh:
        wtr = csv.writer(fh)
        n = result.grid_values.shape[1]
        wtr.writerow(["t", *[f"u{i}" for i in range(n)]])
        for t, row in zip(result.grid_times, result.grid_values):
            wtr.writerow([repr(float(t)), *[repr(float(x)) for x in row]])
    paths["samples"] = sp

    summ = out / "summary.txt"
    summ.write_text("\n".join(result.summary_lines()) + "\n")
    paths["summary"] = summ
    return paths


@dataclass(frozen=True)
class AuditReport:
    passed: bool
    messages: tuple


def audit_artifacts(out_dir) -> AuditReport:
    """Re-check the CSV artifacts of a finished run directory.

    Verifies ledger slack row by row, bounds finiteness, mismatch
    nonnegativity, jump verdicts, and sample-grid monotonicity. Returns
    FAIL (with messages) rather than raising on bad content."""
    out = Path(out_dir)
    msgs = []
    ok = True

    if not (out / "manifest.cfg").exists():
        msgs.append("missing manifest.cfg")
        ok = False

    lp = out / "ledger.csv"
    if lp.exists():
        worst = np.inf
        with open(lp, newline="") as fh:
            for row in csv.DictReader(fh):
                lhs, rhs, slack = float(row["lhs"]), float(row["rhs"]), float(row["slack"])
                scale = 1.0 + abs(lhs) + abs(rhs)
                if abs((rhs - lhs) - slack) > 1e-9 * scale:
                    msgs.append(f"ledger row ({row['m']},{row['n']}): slack does not match lhs/rhs")
                    ok = False
                if slack < -1e-9 * scale:
                    msgs.append(f"ledger row ({row['m']},{row['n']}): negative slack {slack!r}")
                    ok = False
                worst = min(worst, slack / scale)
        msgs.append(f"ledger: worst normalized slack {worst:.3e}")

    bp = out / "bounds.csv"
    if bp.exists():
        with open(bp, newline="") as fh:
            for row in csv.DictReader(fh):
                for lbl in BoundsReport.LABELS:
                    val = float(row[lbl])
                    if not np.isfinite(val):
                        msgs.append(f"bounds: {lbl} not finite")
                        ok = False
    else:
        msgs.append("missing bounds.csv")
        ok = False

    mp = out / "mismatch.csv"
    if mp.exists():
        with open(mp, newline="") as fh:
            for row in csv.DictReader(fh):
                val = float(row["value"])
                if not np.isfinite(val) or val < -1e-12:
                    msgs.append(f"mismatch: bad value for {row['metric']}")
                    ok = False
    else:
        msgs.append("missing mismatch.csv")
        ok = False

    jp = out / "jumps.csv"
    if jp.exists():
        with open(jp, newline="") as fh:
            for row in csv.DictReader(fh):
                if row["verdict"] not in ("PASS", "FAIL"):
                    msgs.append(f"jumps: bad verdict {row['verdict']!r}")
                    ok = False
                elif row["verdict"] == "FAIL":
                    msgs.append(f"jumps: recorded FAIL at t*={row['t_star']}")
                    ok = False

    sp = out / "samples.csv"
    if sp.exists():
        with open(sp, newline="") as fh:
            times = [float(row["t"]) for row in csv.DictReader(fh)]
        if any(b <= a for a, b in zip(times[:-1], times[1:])):
            msgs.append("samples: time grid not strictly increasing")
            ok = False

    return AuditReport(passed=ok, messages=tuple(msgs))
