"""Rate-independent dissipation: weighted l1 potential, its viscous
augmentation and conjugate, the viscous contact potential, prox, and
subdifferential tests.

The potential is R(z) = sum_i w_i |z_i| with positive weights that fold the
mesh factor and the friction coefficient into one array. Its subdifferential
at zero is the box prod_i [-w_i, w_i] under the Euclidean pairing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spaces import MetricOperator


class ProjectionError(RuntimeError):
    """Box projection inner solver failed to reach its KKT tolerance."""


@dataclass(frozen=True, eq=False)
class DissipationPotential:
    """Weighted l1 potential with mesh width recorded for the Z-norm bounds."""

    w: np.ndarray
    h: float = 1.0

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=float)
        object.__setattr__(self, "w", w)
        if w.ndim != 1 or not np.all(w > 0):
            raise ValueError("weights must be a 1-D positive array")
        if not self.h > 0:
            raise ValueError("mesh width must be positive")

    @staticmethod
    def uniform(n: int, nu: float, h: float = 1.0) -> "DissipationPotential":
        """Friction coefficient nu per unit length, folded with the mesh."""
        return DissipationPotential(np.full(n, nu * h), h)

    @property
    def n(self) -> int:
        return self.w.size

    @property
    def rho1(self) -> float:
        return float(self.w.min() / self.h)

    @property
    def rho2(self) -> float:
        return float(self.w.max() / self.h)

    # -- values -----------------------------------------------------------

    def R(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=float)
        if z.shape != self.w.shape:
            raise ValueError(f"expected shape {self.w.shape}, got {z.shape}")
        return float(self.w @ np.abs(z))

    def R_eps(self, visc_V: MetricOperator, eps: float, v: np.ndarray) -> float:
        if not eps > 0:
            raise ValueError("eps must be positive")
        return 0.5 * eps * visc_V.quad(np.asarray(v, dtype=float)) + self.R(v)

    def project_box_Vinv(
        self,
        visc_V: MetricOperator,
        zeta: np.ndarray,
        max_iter: int = 10_000,
        kkt_tol: float = 1e-10,
    ) -> tuple[np.ndarray, float]:
        """Projection of zeta onto the box in the V^{-1} metric.

        Returns the projected point eta and dist = |zeta - eta|_{V^{-1}}.
        Diagonal metrics clamp componentwise; otherwise the box-constrained
        quadratic is solved by projected gradient with Barzilai-Borwein steps.
        """
        zeta = np.asarray(zeta, dtype=float)
        if not np.all(np.isfinite(zeta)):
            raise ValueError("zeta must be finite")
        w = self.w
        if visc_V.kind == "diagonal":
            eta = np.clip(zeta, -w, w)
            return eta, float(np.sqrt(((zeta - eta) ** 2 / visc_V.diag).sum()))

        scale = 1.0 + float(np.abs(zeta).max()) + float(w.max())
        tol = kkt_tol * scale
        eta = np.clip(zeta, -w, w)
        grad = visc_V.solve(eta - zeta)
        # Objective Hessian is V^{-1}, so 1/L = lambda_min(V) is a safe step.
        step = visc_V.min_eig()
        for _ in range(max_iter):
            # Projected-gradient KKT residual for the box constraint.
            resid = eta - np.clip(eta - grad, -w, w)
            if float(np.abs(resid).max()) <= tol:
                dist2 = float((zeta - eta) @ visc_V.solve(zeta - eta))
                return eta, float(np.sqrt(max(dist2, 0.0)))
            eta_new = np.clip(eta - step * grad, -w, w)
            grad_new = visc_V.solve(eta_new - zeta)
            s = eta_new - eta
            y = grad_new - grad
            sy = float(s @ y)
            step = float(s @ s) / sy if sy > 1e-300 else step
            eta, grad = eta_new, grad_new
        raise ProjectionError(f"box projection did not reach tolerance {tol}")

    def R_eps_star(self, visc_V: MetricOperator, eps: float, zeta: np.ndarray) -> float:
        if not eps > 0:
            raise ValueError("eps must be positive")
        _, dist = self.project_box_Vinv(visc_V, zeta)
        return dist * dist / (2.0 * eps)

    def contact_potential(self, visc_V: MetricOperator, v: np.ndarray, zeta: np.ndarray) -> float:
        """p_V(v, zeta) = R(v) + |v|_V * dist_{V^{-1}}(zeta; box)."""
        _, dist = self.project_box_Vinv(visc_V, zeta)
        return self.R(v) + visc_V.norm(np.asarray(v, dtype=float)) * dist

    # -- prox and subdifferential ------------------------------------------

    def prox(self, quad_op: MetricOperator, center: np.ndarray, anchor: np.ndarray) -> np.ndarray:
        """argmin_u (1/2)<Q(u-center), u-center> + R(u-anchor), Q diagonal.

        Componentwise soft threshold of center-anchor with thresholds w_i/Q_ii,
        shifted back by anchor. Exactly critical components stay at rest.
        """
        if quad_op.kind != "diagonal":
            raise ValueError("prox requires a diagonal quadratic metric")
        center = np.asarray(center, dtype=float)
        anchor = np.asarray(anchor, dtype=float)
        c = center - anchor
        thr = self.w / quad_op.diag
        return anchor + np.sign(c) * np.maximum(np.abs(c) - thr, 0.0)

    def subdiff_membership(self, eta: np.ndarray, v: np.ndarray, tol: float) -> bool:
        """eta in dR(v): inside the box and <eta, v> reaches R(v)."""
        if not tol > 0:
            raise ValueError("tol must be positive")
        eta = np.asarray(eta, dtype=float)
        v = np.asarray(v, dtype=float)
        if np.any(np.abs(eta) > self.w + tol):
            return False
        rv = self.R(v)
        return float(eta @ v) >= rv - tol * (1.0 + rv)

    def r_variation(self, samples) -> float:
        """Sum of R over increments of a time-ordered list of states."""
        samples = [np.asarray(s, dtype=float) for s in samples]
        if not samples:
            raise ValueError("need at least one sample")
        return float(sum(self.R(b - a) for a, b in zip(samples[:-1], samples[1:])))


# Module-level forms mirroring the operation names.


def eval_R(pot: DissipationPotential, z: np.ndarray) -> float:
    return pot.R(z)


def eval_R_eps(pot: DissipationPotential, visc_V: MetricOperator, eps: float, v: np.ndarray) -> float:
    return pot.R_eps(visc_V, eps, v)


def project_box_Vinv(pot: DissipationPotential, visc_V: MetricOperator, zeta: np.ndarray):
    return pot.project_box_Vinv(visc_V, zeta)


def eval_R_eps_star(pot: DissipationPotential, visc_V: MetricOperator, eps: float, zeta: np.ndarray) -> float:
    return pot.R_eps_star(visc_V, eps, zeta)


def eval_contact_potential(pot: DissipationPotential, visc_V: MetricOperator, v: np.ndarray, zeta: np.ndarray) -> float:
    return pot.contact_potential(visc_V, v, zeta)


def prox_R(pot: DissipationPotential, quad_op: MetricOperator, center: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    return pot.prox(quad_op, center, anchor)


def subdiff_membership(pot: DissipationPotential, eta: np.ndarray, v: np.ndarray, tol: float) -> bool:
    return pot.subdiff_membership(eta, v, tol)


def r_variation(pot: DissipationPotential, samples) -> float:
    return pot.r_variation(samples)
