"""Canonical symplectic structure on R^{2s} and pointwise subspace algebra.

Coordinates are ordered (q1..qs, p1..ps).  The structure matrix is

    J = [[0, I], [-I, 0]],    omega(u, v) = u^T J v,

and the sign convention is fixed by i_{X_f} omega = df, which in these
coordinates gives X_f = (df/dp, -df/dq).  Every rank decision in this
module runs through one singular value cutoff relative to the largest
singular value; the cutoff comes from a shared Tolerances instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances
from .expr import ProceduralScalar, ScalarField

__all__ = [
    "SymplecticStructure",
    "structure_matrix",
    "omega",
    "apply_structure",
    "numerical_rank",
    "nullspace",
    "Subspace",
    "SubspaceClass",
    "symp_orth",
    "classify",
    "contains",
    "VectorField",
    "fd_jacobian",
    "hamiltonian_vf",
    "poisson",
    "poisson_field",
    "lie_bracket",
]


def structure_matrix(dimension_s: int) -> np.ndarray:
    s = dimension_s
    J = np.zeros((2 * s, 2 * s))
    J[:s, s:] = np.eye(s)
    J[s:, :s] = -np.eye(s)
    return J


def apply_structure(u: np.ndarray) -> np.ndarray:
    """J u without forming J; u ordered (q block, p block)."""
    u = np.asarray(u, dtype=float)
    s = u.shape[0] // 2
    return np.concatenate([u[s:], -u[:s]])


@dataclass(frozen=True)
class SymplecticStructure:
    dimension_s: int

    @property
    def matrix(self) -> np.ndarray:
        return structure_matrix(self.dimension_s)

    def omega(self, u, v) -> float:
        return omega(u, v)


def omega(u, v) -> float:
    """Canonical two form on vectors of even length."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1 or u.shape[0] % 2:
        raise ValueError("omega expects two vectors of equal even length")
    s = u.shape[0] // 2
    return float(u[:s] @ v[s:] - u[s:] @ v[:s])


def numerical_rank(A: np.ndarray, rank_tol: float = DEFAULT_TOLERANCES.rank) -> int:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return 0
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rank_tol * sv[0]))


def nullspace(A: np.ndarray, rank_tol: float = DEFAULT_TOLERANCES.rank) -> np.ndarray:
    """Orthonormal basis of the kernel, as columns."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    _, sv, vh = np.linalg.svd(A)
    if sv.size and sv[0] > 0.0:
        rank = int(np.sum(sv > rank_tol * sv[0]))
    else:
        rank = 0
    return vh[rank:].T.copy()


@dataclass(frozen=True)
class Subspace:
    """A linear subspace of the tangent space at a point of R^{2s}.

    The stored basis is orthonormal; the constructor rejects spanning sets
    whose numerical rank falls short of the number of vectors supplied.
    """

    basepoint: np.ndarray
    basis: np.ndarray  # (2s, r), orthonormal columns
    rank_tol: float = field(default=DEFAULT_TOLERANCES.rank)

    @classmethod
    def span(
        cls,
        basepoint,
        vectors,
        rank_tol: float = DEFAULT_TOLERANCES.rank,
    ) -> "Subspace":
        basepoint = np.asarray(basepoint, dtype=float)
        V = np.asarray(vectors, dtype=float)
        if V.ndim == 1:
            V = V[:, None]
        if V.shape[0] != basepoint.shape[0]:
            raise ValueError("vectors must live in the tangent space at basepoint")
        if V.shape[1] == 0:
            return cls(basepoint, np.zeros((basepoint.shape[0], 0)), rank_tol)
        U, sv, _ = np.linalg.svd(V, full_matrices=False)
        rank = int(np.sum(sv > rank_tol * sv[0])) if sv[0] > 0.0 else 0
        if rank < V.shape[1]:
            raise ValueError(
                f"spanning set is rank deficient: rank {rank} from {V.shape[1]} vectors"
            )
        return cls(basepoint, U[:, :rank], rank_tol)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]


def contains(outer: Subspace, inner: Subspace) -> bool:
    """Subspace containment by a rank test: inner <= outer."""
    if inner.dim == 0:
        return True
    stacked = np.hstack([outer.basis, inner.basis])
    tol = min(outer.rank_tol, inner.rank_tol)
    return numerical_rank(stacked, tol) == outer.dim


def symp_orth(V: Subspace) -> Subspace:
    """Symplectic orthogonal complement at the same basepoint.

    w lies in the complement iff omega(b, w) = 0 for every basis vector b,
    i.e. w is in the kernel of (J B)^T.
    """
    if V.ambient_dim % 2:
        raise ValueError("ambient dimension must be even")
    JB = np.apply_along_axis(apply_structure, 0, V.basis) if V.dim else V.basis
    kernel = nullspace(JB.T, V.rank_tol) if V.dim else np.eye(V.ambient_dim)
    return Subspace(V.basepoint, kernel, V.rank_tol)


@dataclass(frozen=True)
class SubspaceClass:
    isotropic: bool
    coisotropic: bool
    lagrangian: bool
    symplectic: bool


def classify(V: Subspace) -> SubspaceClass:
    W = symp_orth(V)
    iso = contains(W, V)
    coiso = contains(V, W)
    tol = V.rank_tol
    if V.dim == 0 or W.dim == 0:
        transverse = True
    else:
        stacked = np.hstack([V.basis, W.basis])
        transverse = numerical_rank(stacked, tol) == V.dim + W.dim
    return SubspaceClass(
        isotropic=iso,
        coisotropic=coiso,
        lagrangian=iso and coiso,
        symplectic=transverse,
    )


# ---------------------------------------------------------------------------
# vector fields


@dataclass(frozen=True)
class VectorField:
    """A vector field on R^{2s} with an explicit Jacobian evaluator.

    kind records how the field came to be: 'analytic' fields evaluate a
    closed form (dual number derivatives, exact), 'procedural' fields wrap
    a numerical construction.  jacobian_is_fd marks Jacobians obtained by
    central differences of the evaluator; reports surface the flag.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    jacobian_evaluator: Callable[[np.ndarray], np.ndarray]
    dimension_s: int
    kind: str = "analytic"
    jacobian_is_fd: bool = False
    label: str = ""

    @property
    def dim(self) -> int:
        return 2 * self.dimension_s

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.evaluator(np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, x) -> np.ndarray:
        return np.asarray(
            self.jacobian_evaluator(np.asarray(x, dtype=float)), dtype=float
        )


def fd_jacobian(
    fn: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    step: float = DEFAULT_TOLERANCES.fd_step,
) -> np.ndarray:
    """Central difference Jacobian, the fallback for procedural fields."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.shape[0]):
        e = np.zeros_like(x)
        e[j] = step
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2.0 * step))
    return np.column_stack(cols)


ScalarLike = Union[ScalarField, ProceduralScalar]


def hamiltonian_vf(
    f: ScalarLike,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> VectorField:
    """Hamiltonian vector field of a scalar: X_f = J grad f.

    In block form X_f = (df/dp, -df/dq), so for example the field of 'q1'
    is the constant vector with -1 in the p1 slot.  Parsed scalars get an
    exact Jacobian through second order duals; procedural scalars fall
    back to a flagged central difference Jacobian.
    """
    s = f.dimension_s

    def evaluator(x: np.ndarray) -> np.ndarray:
        return apply_structure(f.gradient(x))

    if isinstance(f, ScalarField):

        def jacobian(x: np.ndarray) -> np.ndarray:
            H = f.hessian(x)
            return np.vstack([H[s:], -H[:s]])

        return VectorField(evaluator, jacobian, s, kind="analytic", label=f.source)

    def jacobian_fd(x: np.ndarray) -> np.ndarray:
        return fd_jacobian(evaluator, x, tolerances.fd_step)

    return VectorField(
        evaluator,
        jacobian_fd,
        s,
        kind="procedural",
        jacobian_is_fd=True,
        label=getattr(f, "label", ""),
    )


def poisson(f: ScalarLike, g: ScalarLike, x) -> float:
    """Poisson bracket {f, g}(x) = omega(X_f, X_g)(x) = grad f . J grad g."""
    gf = f.gradient(x)
    gg = g.gradient(x)
    return omega(apply_structure(gf), apply_structure(gg))


def poisson_field(f: ScalarField, g: ScalarField) -> ProceduralScalar:
    """The bracket {f, g} as a scalar with an exact gradient.

    grad {f,g} = Hf J grad g - Hg J grad f, assembled from second order
    dual evaluations of f and g.
    """
    if f.dimension_s != g.dimension_s:
        raise ValueError("fields must share dimension_s")

    def value_fn(x: np.ndarray) -> float:
        return poisson(f, g, x)

    def gradient_fn(x: np.ndarray) -> np.ndarray:
        Hf = f.hessian(x)
        Hg = g.hessian(x)
        return Hf @ apply_structure(g.gradient(x)) - Hg @ apply_structure(f.gradient(x))

    return ProceduralScalar(
        value_fn,
        gradient_fn,
        f.dimension_s,
        label=f"{{{f.source}, {g.source}}}",
    )


def lie_bracket(X: VectorField, Y: VectorField, x) -> np.ndarray:
    """[X, Y](x) = DY(x) X(x) - DX(x) Y(x)."""
    x = np.asarray(x, dtype=float)
    return Y.jacobian(x) @ X(x) - X.jacobian(x) @ Y(x)
