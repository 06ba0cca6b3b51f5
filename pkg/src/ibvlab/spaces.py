"""Finite-dimensional function spaces and SPD metric operators.

States are coefficient vectors of length n on a 1-D chain with mesh width h.
All duality pairings are the plain Euclidean dot product; mesh weighting lives
entirely in the norms, so conjugacy identities stay exact in floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky_banded, cho_solve_banded


class NotSPDError(ValueError):
    """Raised when an operator fails a symmetry or positive-definiteness check."""


class BoundaryCondition(str, Enum):
    DIRICHLET_ZERO = "dirichlet-zero"
    NONE = "none"


@dataclass(frozen=True)
class DiscreteSpace:
    """n degrees of freedom spaced h apart, optionally with zero ghost values."""

    n: int
    h: float
    bc: BoundaryCondition = BoundaryCondition.DIRICHLET_ZERO

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"need n >= 1, got {self.n}")
        if not self.h > 0:
            raise ValueError(f"need h > 0, got {self.h}")

    def grad(self, x: np.ndarray) -> np.ndarray:
        """First differences divided by h.

        With dirichlet-zero ghosts the n values map to n+1 differences;
        without, to the n-1 interior differences.
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected shape ({self.n},), got {x.shape}")
        if self.bc is BoundaryCondition.DIRICHLET_ZERO:
            n = self.n
            g = np.empty(n + 1)
            g[0] = x[0]
            np.subtract(x[1:], x[: n - 1], out=g[1:n])
            g[n] = -x[n - 1]
            g /= self.h
            return g
        return np.diff(x) / self.h

    def grad_batch(self, X: np.ndarray) -> np.ndarray:
        """grad applied to each row of X."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n:
            raise ValueError(f"expected shape (m, {self.n}), got {X.shape}")
        if self.bc is BoundaryCondition.DIRICHLET_ZERO:
            return np.diff(X, axis=1, prepend=0.0, append=0.0) / self.h
        return np.diff(X, axis=1) / self.h


def _as_banded_upper(ab: np.ndarray) -> np.ndarray:
    ab = np.asarray(ab, dtype=float)
    if ab.ndim != 2:
        raise ValueError("banded storage must be 2-D (upper diagonal-ordered form)")
    return ab


@dataclass(frozen=True, eq=False)
class MetricOperator:
    """SPD operator standing in for the mass/viscosity operators and space metrics.

    kind is one of diagonal, banded-spd, dense-spd. The symmetric factorization
    is computed at construction, so instances are immutable and safe to share
    across workers; ``solve`` never mutates state.
    """

    kind: str
    n: int
    diag: np.ndarray | None = None
    banded: np.ndarray | None = None  # scipy upper diagonal-ordered form
    dense: np.ndarray | None = None
    _factor: object = field(default=None, repr=False, compare=False)
    # dense copy of small banded operators; one BLAS matvec beats diagonal slicing
    _mv: np.ndarray | None = field(default=None, repr=False, compare=False)

    # -- constructors ----------------------------------------------------

    @staticmethod
    def diagonal(d: np.ndarray) -> "MetricOperator":
        d = np.asarray(d, dtype=float)
        if d.ndim != 1:
            raise ValueError("diagonal coefficients must be 1-D")
        if not np.all(d > 0):
            raise NotSPDError("diagonal entries must be positive")
        return MetricOperator(kind="diagonal", n=d.size, diag=d)

    @staticmethod
    def identity(n: int, scale: float = 1.0) -> "MetricOperator":
        if not scale > 0:
            raise NotSPDError("scale must be positive")
        return MetricOperator.diagonal(np.full(n, float(scale)))

    @staticmethod
    def banded_spd(ab: np.ndarray) -> "MetricOperator":
        ab = _as_banded_upper(ab)
        n = ab.shape[1]
        try:
            factor = cholesky_banded(ab, lower=False)
        except np.linalg.LinAlgError as exc:
            raise NotSPDError(f"banded Cholesky failed: {exc}") from exc
        mv = _banded_to_dense(ab) if n <= 512 else None
        return MetricOperator(kind="banded-spd", n=n, banded=ab, _factor=factor, _mv=mv)

    @staticmethod
    def dense_spd(a: np.ndarray) -> "MetricOperator":
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("dense operator must be square")
        if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(a).max()))):
            raise NotSPDError("dense operator is not symmetric")
        try:
            factor = cho_factor(a)
        except np.linalg.LinAlgError as exc:
            raise NotSPDError(f"Cholesky failed: {exc}") from exc
        return MetricOperator(kind="dense-spd", n=a.shape[0], dense=a, _factor=factor)

    # -- actions ----------------------------------------------------------

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected shape ({self.n},), got {x.shape}")
        if self.kind == "diagonal":
            return self.diag * x
        if self.kind == "banded-spd":
            if self._mv is not None:
                return self._mv @ x
            return _banded_matvec(self.banded, x)
        return self.dense @ x

    def apply_batch(self, X: np.ndarray) -> np.ndarray:
        """Operator applied to each row of X."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n:
            raise ValueError(f"expected shape (m, {self.n}), got {X.shape}")
        if self.kind == "diagonal":
            return X * self.diag
        if self.kind == "banded-spd":
            if self._mv is not None:
                return X @ self._mv
            u = self.banded.shape[0] - 1
            Y = X * self.banded[u]
            for k in range(1, u + 1):
                upper = self.banded[u - k, k:]
                Y[:, : self.n - k] += upper * X[:, k:]
                Y[:, k:] += upper * X[:, : self.n - k]
            return Y
        return X @ self.dense

    def quad_batch(self, X: np.ndarray) -> np.ndarray:
        """<Ax, x> for each row of X."""
        return np.einsum("ij,ij->i", self.apply_batch(X), np.asarray(X, dtype=float))

    def solve(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.n,):
            raise ValueError(f"expected shape ({self.n},), got {y.shape}")
        if self.kind == "diagonal":
            return y / self.diag
        if self.kind == "banded-spd":
            return cho_solve_banded((self._factor, False), y)
        return cho_solve(self._factor, y)

    def quad(self, x: np.ndarray) -> float:
        """Quadratic form <Ax, x>; raises NotSPDError if it comes out negative."""
        q = float(self.apply(x) @ x)
        scale = float(x @ x)
        if q < -1e-12 * max(1.0, scale):
            raise NotSPDError(f"quadratic form is negative: {q}")
        return max(q, 0.0)

    def norm(self, x: np.ndarray) -> float:
        return float(np.sqrt(self.quad(x)))

    def inv_quad(self, y: np.ndarray) -> float:
        """Quadratic form <A^{-1} y, y> of the inverse metric."""
        q = float(self.solve(y) @ y)
        scale = float(y @ y)
        if q < -1e-12 * max(1.0, scale):
            raise NotSPDError(f"inverse quadratic form is negative: {q}")
        return max(q, 0.0)

    def inv_norm(self, y: np.ndarray) -> float:
        return float(np.sqrt(self.inv_quad(y)))

    def norm_bound(self) -> float:
        """Cheap certified upper bound for the spectral norm (Gershgorin)."""
        if self.kind == "diagonal":
            return float(self.diag.max())
        if self.kind == "banded-spd":
            full = _banded_to_dense(self.banded)
        else:
            full = self.dense
        return float(np.abs(full).sum(axis=1).max())

    def min_eig(self) -> float:
        """Smallest eigenvalue, exact for diagonal, dense solve otherwise."""
        if self.kind == "diagonal":
            return float(self.diag.min())
        full = _banded_to_dense(self.banded) if self.kind == "banded-spd" else self.dense
        return float(np.linalg.eigvalsh(full).min())


def _banded_matvec(ab: np.ndarray, x: np.ndarray) -> np.ndarray:
    u = ab.shape[0] - 1
    y = ab[u] * x
    for k in range(1, u + 1):
        upper = ab[u - k, k:]
        y[: x.size - k] += upper * x[k:]
        y[k:] += upper * x[: x.size - k]
    return y


def _banded_to_dense(ab: np.ndarray) -> np.ndarray:
    u = ab.shape[0] - 1
    n = ab.shape[1]
    a = np.diag(ab[u])
    for k in range(1, u + 1):
        a += np.diag(ab[u - k, k:], k=k) + np.diag(ab[u - k, k:], k=-k)
    return a


# Module-level forms of the operator actions.


def apply(op: MetricOperator, x: np.ndarray) -> np.ndarray:
    return op.apply(x)


def solve(op: MetricOperator, y: np.ndarray) -> np.ndarray:
    return op.solve(y)


def mnorm(op: MetricOperator, x: np.ndarray) -> float:
    return op.norm(x)


def dirichlet_laplacian(space: DiscreteSpace) -> MetricOperator:
    """Stiffness operator of the zero-boundary chain, scaled so that
    <Ax, x> = h * sum of grad(x)^2, i.e. the squared gradient seminorm."""
    n = space.n
    ab = np.zeros((2, n))
    ab[1] = 2.0 / space.h
    ab[0, 1:] = -1.0 / space.h
    if space.bc is BoundaryCondition.NONE:
        ab[1, 0] = ab[1, -1] = 1.0 / space.h
    return MetricOperator.banded_spd(ab)


def lumped_mass(space: DiscreteSpace) -> MetricOperator:
    """Diagonal mass operator with <Mx, x> equal to the squared W-norm."""
    return MetricOperator.identity(space.n, scale=space.h)


@dataclass(frozen=True, eq=False)
class NormFamily:
    """All norms used by the solver and its diagnostics.

    Z is the weighted l1 norm, W the weighted l2 norm, U adds the gradient
    seminorm, and the starred norms are duals under the Euclidean pairing.
    """

    space: DiscreteSpace
    mass_M: MetricOperator
    visc_V: MetricOperator
    _gram_U_inv: np.ndarray = field(default=None, repr=False, compare=False)

    @staticmethod
    def build(space: DiscreteSpace, mass_M: MetricOperator, visc_V: MetricOperator) -> "NormFamily":
        # Gram matrix of the U-norm: h*I plus the stiffness form, which
        # already carries the mesh weight (<Ax, x> = h |grad x|^2).
        stiff = _banded_to_dense(dirichlet_laplacian(space).banded)
        gram = space.h * np.eye(space.n) + stiff
        return NormFamily(space, mass_M, visc_V, _gram_U_inv=np.linalg.inv(gram))

    @property
    def h(self) -> float:
        return self.space.h

    def norm_Z(self, x: np.ndarray) -> float:
        return float(self.h * np.abs(x).sum())

    def norm_W(self, x: np.ndarray) -> float:
        return math.sqrt(self.h * float(x @ x))

    def norm_U(self, x: np.ndarray) -> float:
        gx = self.space.grad(x)
        return math.sqrt(self.h * (float(x @ x) + float(gx @ gx)))

    def norm_Zstar(self, zeta: np.ndarray) -> float:
        return float(np.abs(zeta).max() / self.h)

    def norm_Ustar(self, zeta: np.ndarray) -> float:
        return math.sqrt(max(float(zeta @ (self._gram_U_inv @ zeta)), 0.0))

    def norm_M(self, x: np.ndarray) -> float:
        return self.mass_M.norm(x)

    def norm_V(self, x: np.ndarray) -> float:
        return self.visc_V.norm(x)

    # Row-wise variants used by the interpolant mismatch metrics.

    def norm_Z_batch(self, X: np.ndarray) -> np.ndarray:
        return self.h * np.abs(X).sum(axis=1)

    def norm_W_batch(self, X: np.ndarray) -> np.ndarray:
        return np.sqrt(self.h * np.einsum("ij,ij->i", X, X))

    def norm_U_batch(self, X: np.ndarray) -> np.ndarray:
        G = self.space.grad_batch(X)
        return np.sqrt(self.h * (np.einsum("ij,ij->i", X, X) + np.einsum("ij,ij->i", G, G)))

    def norm_Ustar2_batch(self, Z: np.ndarray) -> np.ndarray:
        return np.maximum(np.einsum("ij,ij->i", Z @ self._gram_U_inv, Z), 0.0)
