"""Inertial-viscous incremental minimization.

Each step solves

    u^k = argmin_u  (eps^2/2tau^2)|u - 2u^{k-1} + u^{k-2}|_M^2
                  + (eps/2tau)|u - u^{k-1}|_V^2 + R(u - u^{k-1}) + E(t^k, u)

by proximal gradient with a certified Lipschitz step. The multiplier eta
returned for each step is the exact prox certificate (it lies in the
rate-independent subdifferential up to floating point), so force balance and
complementarity hold to solver tolerance by construction and are re-checked,
not assumed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dissipation import DissipationPotential
from .energy import EnergyModel
from .spaces import MetricOperator, NormFamily


class InnerSolveError(RuntimeError):
    """Prox gradient failed to reach tolerance within the iteration budget."""


class TrajectoryError(RuntimeError):
    """A step failed mid-run. Carries the truncated trajectory in .partial."""

    def __init__(self, message: str, partial: "DiscreteTrajectory"):
        super().__init__(message)
        self.partial = partial


class StateBoxError(RuntimeError):
    """A computed state left the box on which curvature bounds were certified."""


class MembershipError(RuntimeError):
    """The returned multiplier failed the subdifferential check."""


@dataclass(frozen=True)
class InnerParams:
    """Inner solver knobs.

    tol is relative: the solve stops when L|u_{j+1}-u_j| <= tol (1 + |grad|).
    trial_scale < 1 starts from a cheaper step and backtracks up to the
    certified constant; 1.0 disables the objective evaluations entirely.
    """

    tol: float = 1e-11
    max_iter: int = 500
    membership_tol: float = 1e-8
    trial_scale: float = 1.0
    strict_descent: bool = False


@dataclass(frozen=True)
class SchemeConfig:
    """Discretization parameters for one run.

    tau must divide T to rounding error. store_full=None lets the runner
    keep every state when the run is small enough and fall back to strided
    snapshots (plus streaming scalars) on long runs.
    """

    eps: float
    tau: float
    T: float
    u0: np.ndarray
    u1: np.ndarray | None = None
    inner: InnerParams = field(default_factory=InnerParams)
    store_full: bool | None = None
    collect: str = "full"
    max_full_elements: int = 4_000_000
    snapshot_slots: int = 4096

    def __post_init__(self) -> None:
        if self.eps <= 0 or self.tau <= 0 or self.T <= 0:
            raise ValueError("eps, tau, T must be positive")
        n_steps = round(self.T / self.tau)
        if n_steps < 1 or abs(n_steps * self.tau - self.T) > 1e-9 * self.T:
            raise ValueError(f"tau={self.tau} does not divide T={self.T}")
        if self.collect not in ("full", "light"):
            raise ValueError("collect must be 'full' or 'light'")
        u0 = np.asarray(self.u0, dtype=float)
        object.__setattr__(self, "u0", u0)
        u1 = np.zeros_like(u0) if self.u1 is None else np.asarray(self.u1, dtype=float)
        if u1.shape != u0.shape:
            raise ValueError("u1 shape mismatch")
        object.__setattr__(self, "u1", u1)

    @property
    def n_steps(self) -> int:
        return round(self.T / self.tau)

    def regime_ok(self, model: EnergyModel, visc_V: MetricOperator) -> bool:
        """Ratio condition tau/eps <= kappa/(2 lam) with kappa the smallest
        V-eigenvalue against the W-metric; vacuous for lam = 0."""
        if model.lam <= 0.0:
            return True
        kappa = visc_V.min_eig() / model.space.h
        return self.tau / self.eps <= kappa / (2.0 * model.lam)


@dataclass(frozen=True)
class StepRecord:
    k: int
    t: float
    u: np.ndarray
    v: np.ndarray
    eta: np.ndarray
    xi: np.ndarray
    iters: int
    el_res: float
    compl: float


def _make_smooth(model: EnergyModel, mass_M: MetricOperator, visc_V: MetricOperator, eps: float, tau: float):
    """Returns (bind, L_cert): bind(t, p, q) yields the smooth part's gradient
    and value as closures over the step data, L_cert its certified Lipschitz
    constant on the model's state box."""
    a2 = eps * eps / (tau * tau)
    a1 = eps / tau
    L_cert = a2 * mass_M.norm_bound() + a1 * visc_V.norm_bound() + model.curvature()
    mgrad, mval = model.grad, model.value

    if mass_M.kind == "diagonal" and visc_V.kind == "diagonal":
        dM = a2 * mass_M.diag
        dV = a1 * visc_V.diag
        dco = dM + dV

        def bind(t: float, p: np.ndarray, q: np.ndarray):
            lin = dM * p + dV * q

            def grad_S(u: np.ndarray) -> np.ndarray:
                return dco * u - lin + mgrad(t, u)

            def val_S(u: np.ndarray) -> float:
                dp = u - p
                dq = u - q
                return 0.5 * float((dM * dp) @ dp) + 0.5 * float((dV * dq) @ dq) + mval(t, u)

            return grad_S, val_S

    else:

        def bind(t: float, p: np.ndarray, q: np.ndarray):
            def grad_S(u: np.ndarray) -> np.ndarray:
                return a2 * mass_M.apply(u - p) + a1 * visc_V.apply(u - q) + mgrad(t, u)

            def val_S(u: np.ndarray) -> float:
                return 0.5 * a2 * mass_M.quad(u - p) + 0.5 * a1 * visc_V.quad(u - q) + mval(t, u)

            return grad_S, val_S

    return bind, L_cert


def _prox_gradient(grad_S, val_S, q, u_start, w, L_cert, params: InnerParams):
    """Returns (u, eta, iters). eta is the prox certificate of the accepted
    step: exactly inside the box [-w, w] and exactly complementary to the
    returned rate."""
    L = L_cert * params.trial_scale
    backtrack = params.trial_scale < 1.0 or params.strict_descent
    u = u_start
    g = grad_S(u)
    f_cur = val_S(u) if backtrack else 0.0
    tol = params.tol
    wL = w / L
    # updates below a few ulps of the iterate cannot shrink further; without
    # this floor, huge L (tiny tau) turns the relative test into a limit cycle
    floor2 = 1e-30 * (1.0 + float(u_start @ u_start))
    for j in range(params.max_iter):
        cq = (u - g / L) - q
        clipped = cq.clip(-wL, wL)
        u_next = q + cq - clipped
        du = u_next - u
        nd2 = float(du @ du)
        if backtrack:
            f_next = val_S(u_next)
            # Quadratic upper bound test; guaranteed to hold at L_cert.
            while f_next > f_cur + float(g @ du) + 0.5 * L * nd2 + 1e-12 * (1.0 + abs(f_cur)) and L < L_cert:
                L = min(2.0 * L, L_cert)
                wL = w / L
                cq = (u - g / L) - q
                clipped = cq.clip(-wL, wL)
                u_next = q + cq - clipped
                du = u_next - u
                nd2 = float(du @ du)
                f_next = val_S(u_next)
            if params.strict_descent and f_next > f_cur + 1e-12 * (1.0 + abs(f_cur)):
                raise InnerSolveError(f"objective increased at iteration {j}")
            f_cur = f_next
        # fixed-point gap of the prox map; the pre-step gradient sets the scale
        if nd2 <= floor2 or L * math.sqrt(nd2) <= tol * (1.0 + math.sqrt(float(g @ g))):
            # re-clip: L*(w/L) can overshoot w by an ulp
            return u_next, np.clip(L * clipped, -w, w), j + 1
        g = grad_S(u_next)
        u = u_next
    raise InnerSolveError(
        f"no convergence in {params.max_iter} iterations "
        f"(last update {math.sqrt(nd2):.3e}, tol {tol:.1e})"
    )


def incremental_step(
    model: EnergyModel,
    pot: DissipationPotential,
    mass_M: MetricOperator,
    visc_V: MetricOperator,
    eps: float,
    tau: float,
    t: float,
    u_prev: np.ndarray,
    u_prev2: np.ndarray,
    params: InnerParams = InnerParams(),
    k: int = 0,
) -> StepRecord:
    """One incremental minimization with full certificate checks."""
    bind, L_cert = _make_smooth(model, mass_M, visc_V, eps, tau)
    p = 2.0 * u_prev - u_prev2
    q = u_prev
    v_prev = (u_prev - u_prev2) / tau
    u_start = u_prev + tau * v_prev
    grad_S, val_S = bind(t, p, q)
    u, eta, iters = _prox_gradient(grad_S, val_S, q, u_start, pot.w, L_cert, params)
    v = (u - q) / tau
    xi = model.grad(t, u)
    el_res, compl = _certify(model, pot, mass_M, visc_V, eps, tau, t, u, v, v_prev, eta, xi, params)
    return StepRecord(k=k, t=t, u=u, v=v, eta=eta, xi=xi, iters=iters, el_res=el_res, compl=compl)


def spot_check_minimality(
    model: EnergyModel,
    pot: DissipationPotential,
    mass_M: MetricOperator,
    visc_V: MetricOperator,
    eps: float,
    tau: float,
    t: float,
    u: np.ndarray,
    u_prev: np.ndarray,
    u_prev2: np.ndarray,
    rng: np.random.Generator,
    n_dirs: int = 20,
    deltas=(1e-3, 1e-2),
) -> float:
    """Smallest margin F(u + delta d) - F(u) over random probe directions;
    nonnegative (to tolerance) when u is the constrained minimizer."""
    bind, _ = _make_smooth(model, mass_M, visc_V, eps, tau)
    p = 2.0 * u_prev - u_prev2
    q = u_prev
    _, val_S = bind(t, p, q)

    def F(x: np.ndarray) -> float:
        return val_S(x) + pot.R(x - q)

    base = F(u)
    scale = 1.0 + float(np.abs(u).max())
    worst = np.inf
    for _ in range(n_dirs):
        d = rng.standard_normal(u.shape)
        d /= np.linalg.norm(d)
        for delta in deltas:
            for sgn in (1.0, -1.0):
                worst = min(worst, F(u + sgn * delta * scale * d) - base)
    return worst


def _certify(model, pot, mass_M, visc_V, eps, tau, t, u, v, v_prev, eta, xi, params):
    if float(np.abs(u).max()) > model.state_box:
        raise StateBoxError(
            f"state magnitude {float(np.abs(u).max()):.3g} exceeds certified box "
            f"{model.state_box} at t={t:.6g}"
        )
    accel = (eps * eps / tau) * mass_M.apply(v - v_prev)
    residual = accel + eps * visc_V.apply(v) + eta + xi
    scale = 1.0 + max(
        float(np.linalg.norm(accel)),
        eps * float(np.linalg.norm(visc_V.apply(v))),
        float(np.linalg.norm(eta)),
        float(np.linalg.norm(xi)),
    )
    el_res = float(np.linalg.norm(residual)) / scale
    rv = pot.R(v)
    compl = abs(float(eta @ v) - rv) / (1.0 + rv)
    if not pot.subdiff_membership(eta, v, tol=params.membership_tol):
        raise MembershipError(f"multiplier left the dissipation subdifferential at t={t:.6g}")
    return el_res, compl


@dataclass(eq=False)
class DiscreteTrajectory:
    """Scheme output: streaming scalar ledgers plus state snapshots.

    Arrays indexed k = 0..N; entries defined only for k >= 1 hold 0 at k = 0
    so cumulative sums line up with the discrete time grid. In light collect
    mode the dual-route columns (Rstar_term, xi_Ustar, acc_Ustar2) are NaN.
    """

    config: SchemeConfig
    n: int
    L_used: float
    regime_ok: bool
    energy: np.ndarray = field(repr=False)
    kinetic: np.ndarray = field(repr=False)
    R_eps_term: np.ndarray = field(repr=False)
    Rstar_term: np.ndarray = field(repr=False)
    work: np.ndarray = field(repr=False)
    R_rate: np.ndarray = field(repr=False)
    normZ_v: np.ndarray = field(repr=False)
    normW2_v: np.ndarray = field(repr=False)
    normV2_v: np.ndarray = field(repr=False)
    normU_u: np.ndarray = field(repr=False)
    xi_Ustar: np.ndarray = field(repr=False)
    acc_Ustar2: np.ndarray = field(repr=False)
    el_res: np.ndarray = field(repr=False)
    compl: np.ndarray = field(repr=False)
    iters: np.ndarray = field(repr=False)
    snap_ks: np.ndarray = field(repr=False)
    u_snap: np.ndarray = field(repr=False)
    v_snap: np.ndarray = field(repr=False)
    u_full: np.ndarray | None = field(repr=False)
    v_full: np.ndarray | None = field(repr=False)
    wall_time: float = 0.0
    truncated_at: int | None = None

    @property
    def n_steps(self) -> int:
        return self.config.n_steps

    @property
    def t_grid(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.config.tau

    @property
    def has_full(self) -> bool:
        return self.u_full is not None

    def state(self, k: int) -> np.ndarray:
        """u^k, from full storage or the nearest stored snapshot at exactly k."""
        if self.u_full is not None:
            return self.u_full[k]
        pos = np.searchsorted(self.snap_ks, k)
        if pos < len(self.snap_ks) and self.snap_ks[pos] == k:
            return self.u_snap[pos]
        raise KeyError(f"state {k} not stored; nearest snapshots at {self.nearest_snapshots(k)}")

    def rate(self, k: int) -> np.ndarray:
        if self.v_full is not None:
            return self.v_full[k]
        pos = np.searchsorted(self.snap_ks, k)
        if pos < len(self.snap_ks) and self.snap_ks[pos] == k:
            return self.v_snap[pos]
        raise KeyError(f"rate {k} not stored")

    def nearest_snapshots(self, k: int) -> tuple[int, int]:
        """Stored indices bracketing k (clamped at the ends)."""
        pos = int(np.searchsorted(self.snap_ks, k))
        lo = self.snap_ks[max(pos - 1, 0)]
        hi = self.snap_ks[min(pos, len(self.snap_ks) - 1)]
        return int(lo), int(hi)

    @property
    def u_final(self) -> np.ndarray:
        return self.u_snap[-1]

    @property
    def v_final(self) -> np.ndarray:
        return self.v_snap[-1]

    @property
    def total_inner_iters(self) -> int:
        return int(self.iters.sum())


def run_trajectory(
    model: EnergyModel,
    pot: DissipationPotential,
    mass_M: MetricOperator,
    visc_V: MetricOperator,
    config: SchemeConfig,
    norms: NormFamily | None = None,
    params: InnerParams | None = None,
    observers: Sequence = (),
    progress: Callable[[int, float, int], None] | None = None,
) -> DiscreteTrajectory:
    """Run the scheme over [0, T] collecting per-step ledgers.

    Observers get begin(config, u0, v0), on_step(k, t, u, v, v_prev), and
    end(u_N, v_N) when they define those methods. On a step failure the raised
    TrajectoryError carries the truncated trajectory as .partial.
    """
    t_start = time.perf_counter()
    space = model.space
    n = space.n
    if norms is None:
        norms = NormFamily.build(space, mass_M, visc_V)
    if params is None:
        params = config.inner
    eps, tau, N = config.eps, config.tau, config.n_steps
    full_mode = config.store_full
    if full_mode is None:
        full_mode = (N + 1) * n <= config.max_full_elements
    bind, L_cert = _make_smooth(model, mass_M, visc_V, eps, tau)
    light = config.collect == "light"

    u_prev = config.u0.copy()
    v_prev = config.u1.copy()

    shape = (N + 1,)
    energy = np.zeros(shape)
    kinetic = np.zeros(shape)
    R_eps_term = np.zeros(shape)
    Rstar_term = np.full(shape, np.nan) if light else np.zeros(shape)
    work = np.zeros(shape)
    R_rate = np.zeros(shape)
    normZ_v = np.zeros(shape)
    normW2_v = np.zeros(shape)
    normV2_v = np.zeros(shape)
    normU_u = np.zeros(shape)
    xi_Ustar = np.full(shape, np.nan) if light else np.zeros(shape)
    acc_Ustar2 = np.full(shape, np.nan) if light else np.zeros(shape)
    el_res = np.zeros(shape)
    compl = np.zeros(shape)
    iters = np.zeros(shape, dtype=np.int64)

    energy[0] = model.value(0.0, u_prev)
    kinetic[0] = 0.5 * eps * eps * mass_M.quad(v_prev)
    R_rate[0] = pot.R(v_prev)
    normZ_v[0] = norms.norm_Z(v_prev)
    normW2_v[0] = space.h * float(v_prev @ v_prev)
    normV2_v[0] = visc_V.quad(v_prev)
    normU_u[0] = norms.norm_U(u_prev)
    if not light:
        xi_Ustar[0] = np.nan
        acc_Ustar2[0] = np.nan

    if full_mode:
        u_full = np.empty((N + 1, n))
        v_full = np.empty((N + 1, n))
        u_full[0] = u_prev
        v_full[0] = v_prev
    else:
        u_full = v_full = None
    stride = max(1, -(-(N + 1) // config.snapshot_slots))
    snap_list = sorted(set(range(0, N + 1, stride)) | {N})
    snap_ks = np.array(snap_list, dtype=np.int64)
    u_snap = np.empty((len(snap_list), n))
    v_snap = np.empty((len(snap_list), n))
    snap_pos = {k: i for i, k in enumerate(snap_list)}
    u_snap[0] = u_prev
    v_snap[0] = v_prev

    for obs in observers:
        begin = getattr(obs, "begin", None)
        if begin is not None:
            begin(config, u_prev, v_prev)

    u_prev2 = u_prev - tau * v_prev
    u_prev3 = u_prev - (2.0 * tau) * v_prev
    w = pot.w
    a2t = eps * eps / tau
    h = space.h
    box = model.state_box
    mem_tol = params.membership_tol
    # diagonal metrics dominate the runs; skip the operator dispatch for them
    Mdiag = mass_M.diag if mass_M.kind == "diagonal" else None
    Vdiag = visc_V.diag if visc_V.kind == "diagonal" else None
    inv_Vdiag = None if Vdiag is None else 1.0 / Vdiag

    def build(k_done: int) -> DiscreteTrajectory:
        truncated = None if k_done == N else k_done
        if truncated is None:
            sl = slice(None)
            kept = np.ones(len(snap_ks), dtype=bool)
            us, vs, ks = u_snap, v_snap, snap_ks
        else:
            sl = slice(0, k_done + 1)
            kept = snap_ks <= k_done
            ks = snap_ks[kept]
            us = u_snap[kept]
            vs = v_snap[kept]
            if len(ks) == 0 or ks[-1] != k_done:
                ks = np.append(ks, k_done)
                us = np.vstack([us, u_prev[None, :]])
                vs = np.vstack([vs, v_prev[None, :]])
        return DiscreteTrajectory(
            config=config,
            n=n,
            L_used=L_cert,
            regime_ok=config.regime_ok(model, visc_V),
            energy=energy[sl],
            kinetic=kinetic[sl],
            R_eps_term=R_eps_term[sl],
            Rstar_term=Rstar_term[sl],
            work=work[sl],
            R_rate=R_rate[sl],
            normZ_v=normZ_v[sl],
            normW2_v=normW2_v[sl],
            normV2_v=normV2_v[sl],
            normU_u=normU_u[sl],
            xi_Ustar=xi_Ustar[sl],
            acc_Ustar2=acc_Ustar2[sl],
            el_res=el_res[sl],
            compl=compl[sl],
            iters=iters[sl],
            snap_ks=ks,
            u_snap=us,
            v_snap=vs,
            u_full=u_full[sl] if u_full is not None else None,
            v_full=v_full[sl] if v_full is not None else None,
            wall_time=time.perf_counter() - t_start,
            truncated_at=truncated,
        )

    for k in range(1, N + 1):
        t = k * tau
        try:
            p = 2.0 * u_prev - u_prev2
            # warm start only; p itself stays the scheme's inertial point
            u_start = 3.0 * u_prev - 3.0 * u_prev2 + u_prev3
            grad_S, val_S = bind(t, p, u_prev)
            u, eta, it = _prox_gradient(grad_S, val_S, u_prev, u_start, w, L_cert, params)
            if float(np.abs(u).max()) > box:
                raise StateBoxError(
                    f"state magnitude {float(np.abs(u).max()):.3g} exceeds certified box {box} "
                    f"at step {k} (t={t:.6g})"
                )
            v = (u - u_prev) / tau
            xi = model.grad(t, u)
            dv = v - v_prev
            accel = a2t * (Mdiag * dv) if Mdiag is not None else a2t * mass_M.apply(dv)
            visc = eps * (Vdiag * v) if Vdiag is not None else eps * visc_V.apply(v)
            residual = accel + visc + eta + xi
            scale = 1.0 + max(
                math.sqrt(float(accel @ accel)),
                math.sqrt(float(visc @ visc)),
                math.sqrt(float(eta @ eta)),
                math.sqrt(float(xi @ xi)),
            )
            el_res[k] = math.sqrt(float(residual @ residual)) / scale
            av = np.abs(v)
            rv = float(w @ av)
            compl[k] = abs(float(eta @ v) - rv) / (1.0 + rv)
            if compl[k] > mem_tol or float((np.abs(eta) - w).max()) > mem_tol:
                raise MembershipError(f"multiplier left the dissipation subdifferential at step {k}")
        except (InnerSolveError, StateBoxError, MembershipError) as exc:
            raise TrajectoryError(f"step {k} failed: {exc}", build(k - 1)) from exc

        energy[k] = model.value(t, u)
        Mv = Mdiag * v if Mdiag is not None else mass_M.apply(v)
        kinetic[k] = 0.5 * eps * eps * float(Mv @ v)
        R_rate[k] = rv
        vV2 = float(visc @ v) / eps  # visc = eps V v, so this is <Vv, v>
        normV2_v[k] = vV2
        normW2_v[k] = h * float(v @ v)
        normZ_v[k] = h * float(av.sum())
        normU_u[k] = norms.norm_U(u)
        R_eps_term[k] = tau * (0.5 * eps * vV2 + rv)
        work[k] = model.work_integral(t - tau, t, u_prev)
        if not light:
            zeta = -accel - xi
            if inv_Vdiag is not None:
                exc = np.abs(zeta)
                exc -= w
                np.maximum(exc, 0.0, out=exc)
                dist2 = float((exc * exc) @ inv_Vdiag)
            else:
                _, dist = pot.project_box_Vinv(visc_V, zeta)
                dist2 = dist * dist
            Rstar_term[k] = tau * dist2 / (2.0 * eps)
            xi_Ustar[k] = norms.norm_Ustar(xi)
            au = norms.norm_Ustar(accel)
            acc_Ustar2[k] = au * au
        iters[k] = it

        if full_mode:
            u_full[k] = u
            v_full[k] = v
        pos = snap_pos.get(k)
        if pos is not None:
            u_snap[pos] = u
            v_snap[pos] = v
        for obs in observers:
            obs.on_step(k, t, u, v, v_prev)
        if progress is not None:
            progress(k, el_res[k], it)

        u_prev3 = u_prev2
        u_prev2 = u_prev
        u_prev = u
        v_prev = v

    for obs in observers:
        end = getattr(obs, "end", None)
        if end is not None:
            end(u_prev, v_prev)

    return build(N)
