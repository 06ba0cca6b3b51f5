"""Time-dependent driving energies.

Every model exposes value/power/grad plus a semiconvexity defect ``lam``
(the smallest constant making E(t,.) + lam/2 |.|_W^2 convex), a recorded
nonnegativity shift ``C0``, and a gradient Lipschitz bound valid on the
recorded state box. Gradients are single-valued; only C^1 onsite potentials
are supported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dissipation import DissipationPotential
from .spaces import DiscreteSpace, MetricOperator, dirichlet_laplacian

# 4-point Gauss-Legendre nodes and weights on [-1, 1].
_GL4_X = np.array([-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526])
_GL4_W = np.array([0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538])


class EnergyModel:
    """Base contract; concrete models override value/power/grad."""

    space: DiscreteSpace
    lam: float
    C0: float
    state_box: float
    power_bound: Callable[[float], float] | None = None

    def value(self, t: float, u: np.ndarray) -> float:
        raise NotImplementedError

    def power(self, t: float, u: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, t: float, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def curvature(self) -> float:
        """Euclidean Lipschitz bound of grad(t, .) on the state box."""
        raise NotImplementedError

    def work_integral(self, t0: float, t1: float, u: np.ndarray) -> float:
        """Integral of power(r, u) over [t0, t1] at frozen u (4-point quadrature)."""
        half = 0.5 * (t1 - t0)
        mid = 0.5 * (t0 + t1)
        return float(half * sum(w * self.power(mid + half * x, u) for x, w in zip(_GL4_X, _GL4_W)))

    def norm_W(self, x: np.ndarray) -> float:
        return float(np.sqrt(self.space.h * float(x @ x)))


def _check_finite(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    # sum is finite iff every box-bounded entry is; one reduction, no temporary
    if not math.isfinite(float(u.sum())):
        raise ValueError("state contains NaN or Inf")
    return u


@dataclass(frozen=True, eq=False)
class QuadraticEnergy(EnergyModel):
    """E(t,u) = (1/2)<Au, u> - <f(t), u> + C0 with SPD stiffness A."""

    space: DiscreteSpace
    stiff_A: MetricOperator
    f: Callable[[float], np.ndarray]
    fdot: Callable[[float], np.ndarray]
    C0: float = 0.0
    state_box: float = 8.0
    power_bound: Callable[[float], float] | None = None
    lam: float = field(init=False, default=0.0)
    _tcache: dict = field(init=False, repr=False, compare=False, default_factory=dict)

    def _load_at(self, t: float) -> np.ndarray:
        # inner iterations revisit the same t, steps revisit t - tau
        c = self._tcache
        f = c.get(t)
        if f is None:
            f = np.asarray(self.f(t), dtype=float)
            if len(c) > 8:
                c.clear()
            c[t] = f
        return f

    def value(self, t: float, u: np.ndarray) -> float:
        u = _check_finite(u)
        return 0.5 * self.stiff_A.quad(u) - float(self._load_at(t) @ u) + self.C0

    def power(self, t: float, u: np.ndarray) -> float:
        return -float(np.asarray(self.fdot(t)) @ u)

    def grad(self, t: float, u: np.ndarray) -> np.ndarray:
        u = _check_finite(u)
        return self.stiff_A.apply(u) - self._load_at(t)

    def curvature(self) -> float:
        return self.stiff_A.norm_bound()

    def convexity_modulus_W(self) -> float:
        """Uniform convexity modulus in the W-metric."""
        return self.stiff_A.min_eig() / self.space.h

    def work_integral(self, t0: float, t1: float, u: np.ndarray) -> float:
        # Exact: the integrand is -<fdot(r), u>, whose antiderivative is -<f(r), u>.
        return -float((self._load_at(t1) - self._load_at(t0)) @ u)


def double_well(x: np.ndarray) -> np.ndarray:
    return 0.25 * (1.0 - x * x) ** 2


def double_well_prime(x: np.ndarray) -> np.ndarray:
    return x * x * x - x


@dataclass(frozen=True, eq=False)
class DoubleWellEnergy(EnergyModel):
    """Chain with gradient stiffness, double-well onsite term, and linear load.

    E(t,u) = (h/2) sum |grad u|^2 + h sum W(u_i) - h <load(t), u> + C0 with
    W(x) = (1/4)(1-x^2)^2. The load callable returns pointwise values; the
    mesh weight is applied here.
    """

    space: DiscreteSpace
    load: Callable[[float], np.ndarray]
    load_rate: Callable[[float], np.ndarray]
    C0: float = 0.0
    lambda_tilde: float = 1.0
    state_box: float = 2.5
    power_bound: Callable[[float], float] | None = None
    stiff: MetricOperator = field(init=False, repr=False)
    lam: float = field(init=False)
    _tcache: dict = field(init=False, repr=False, compare=False, default_factory=dict)
    _stiff_mv: np.ndarray | None = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self) -> None:
        stiff = dirichlet_laplacian(self.space)
        object.__setattr__(self, "stiff", stiff)
        object.__setattr__(self, "_stiff_mv", stiff._mv)
        lam1 = smallest_dirichlet_eigenvalue(self.space)
        object.__setattr__(self, "lam", max(0.0, self.lambda_tilde - lam1))

    def _load_at(self, t: float) -> np.ndarray:
        c = self._tcache
        f = c.get(t)
        if f is None:
            f = np.asarray(self.load(t), dtype=float)
            if len(c) > 8:
                c.clear()
            c[t] = f
        return f

    def value(self, t: float, u: np.ndarray) -> float:
        u = _check_finite(u)
        h = self.space.h
        gu = self.space.grad(u)
        onsite = 1.0 - u * u
        onsite = 0.25 * float(onsite @ onsite)
        return 0.5 * h * float(gu @ gu) + h * onsite - h * float(self._load_at(t) @ u) + self.C0

    def power(self, t: float, u: np.ndarray) -> float:
        return -self.space.h * float(np.asarray(self.load_rate(t)) @ u)

    def grad(self, t: float, u: np.ndarray) -> np.ndarray:
        u = _check_finite(u)
        mv = self._stiff_mv
        su = mv @ u if mv is not None else self.stiff.apply(u)
        return su + self.space.h * (double_well_prime(u) - self._load_at(t))

    def curvature(self) -> float:
        b = self.state_box
        return self.stiff.norm_bound() + self.space.h * max(3.0 * b * b - 1.0, 1.0)

    def work_integral(self, t0: float, t1: float, u: np.ndarray) -> float:
        return -self.space.h * float((self._load_at(t1) - self._load_at(t0)) @ u)


@dataclass(frozen=True, eq=False)
class ScalarToyEnergy(EnergyModel):
    """One degree of freedom with an arbitrary C^1 onsite potential.

    E(t,u) = W(u) - f(t) u + C0 on a unit mesh. Used as the oracle host for
    fold and jump constructions.
    """

    Wfun: Callable[[float], float]
    Wprime: Callable[[float], float]
    f: Callable[[float], float]
    fdot: Callable[[float], float]
    lam: float
    curvature_const: float
    C0: float = 0.0
    state_box: float = 2.5
    power_bound: Callable[[float], float] | None = None
    space: DiscreteSpace = field(default_factory=lambda: DiscreteSpace(1, 1.0))

    def value(self, t: float, u: np.ndarray) -> float:
        u = _check_finite(u)
        return float(self.Wfun(u[0])) - float(self.f(t)) * float(u[0]) + self.C0

    def power(self, t: float, u: np.ndarray) -> float:
        return -float(self.fdot(t)) * float(u[0])

    def grad(self, t: float, u: np.ndarray) -> np.ndarray:
        u = _check_finite(u)
        return np.array([float(self.Wprime(u[0])) - float(self.f(t))])

    def curvature(self) -> float:
        return self.curvature_const

    def work_integral(self, t0: float, t1: float, u: np.ndarray) -> float:
        return -(float(self.f(t1)) - float(self.f(t0))) * float(u[0])


@dataclass(frozen=True, eq=False)
class FrozenTimeEnergy(EnergyModel):
    """Autonomous view E(t*, .) of another model; power is identically zero."""

    base: EnergyModel
    t_star: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "space", self.base.space)
        object.__setattr__(self, "lam", self.base.lam)
        object.__setattr__(self, "C0", self.base.C0)
        object.__setattr__(self, "state_box", self.base.state_box)

    def value(self, t: float, u: np.ndarray) -> float:
        return self.base.value(self.t_star, u)

    def power(self, t: float, u: np.ndarray) -> float:
        return 0.0

    def grad(self, t: float, u: np.ndarray) -> np.ndarray:
        return self.base.grad(self.t_star, u)

    def curvature(self) -> float:
        return self.base.curvature()

    def work_integral(self, t0: float, t1: float, u: np.ndarray) -> float:
        return 0.0


def smallest_dirichlet_eigenvalue(space: DiscreteSpace, max_iter: int = 50_000, tol: float = 1e-13) -> float:
    """Smallest eigenvalue of the discrete Dirichlet Laplacian by inverse
    power iteration, normalized against the W-metric (the spectral Poincare
    constant of the chain)."""
    stiff = dirichlet_laplacian(space)
    x = np.sin(np.pi * (np.arange(space.n) + 1) / (space.n + 1))
    x /= np.linalg.norm(x)
    lam_old = 0.0
    for _ in range(max_iter):
        y = stiff.solve(x)
        y /= np.linalg.norm(y)
        lam = float(y @ stiff.apply(y))
        if abs(lam - lam_old) <= tol * max(1.0, lam):
            x = y
            break
        x, lam_old = y, lam
    # Rayleigh quotient in the W-metric: <Sx, x> / (h <x, x>).
    return float(x @ stiff.apply(x)) / (space.h * float(x @ x))


@dataclass(frozen=True)
class StabilityReport:
    """Probe margins and first-order check for local lambda-stability."""

    margins: np.ndarray
    first_order_ok: bool
    box_margin: float
    passed: bool

    @property
    def worst_margin(self) -> float:
        return float(self.margins.min()) if self.margins.size else float("inf")


def stability_audit(
    model: EnergyModel,
    pot: DissipationPotential,
    t: float,
    u: np.ndarray,
    probes,
    tol: float,
) -> StabilityReport:
    """Check E(t,u) <= E(t,x) + R(x-u) + (lam/2)|x-u|_W^2 on the given probes,
    and the first-order force-balance test |xi_i| <= w_i + tol."""
    u = np.asarray(u, dtype=float)
    eu = model.value(t, u)
    margins = np.array(
        [
            model.value(t, np.asarray(x, dtype=float))
            + pot.R(np.asarray(x) - u)
            + 0.5 * model.lam * model.norm_W(np.asarray(x) - u) ** 2
            - eu
            for x in probes
        ]
    )
    xi = model.grad(t, u)
    box_margin = float((pot.w - np.abs(xi)).min())
    first_order_ok = box_margin >= -tol
    passed = bool(margins.size == 0 or margins.min() >= -tol) and first_order_ok
    return StabilityReport(margins=margins, first_order_ok=first_order_ok, box_margin=box_margin, passed=passed)


def eval_energy(model: EnergyModel, t: float, u: np.ndarray) -> float:
    return model.value(t, u)


def eval_power(model: EnergyModel, t: float, u: np.ndarray) -> float:
    return model.power(t, u)


def eval_grad(model: EnergyModel, t: float, u: np.ndarray) -> np.ndarray:
    return model.grad(t, u)
