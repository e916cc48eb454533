"""Classical Hamilton-Jacobi specializations on cotangent coordinates.

When the fibration is the position projection (k = s), each parameter
value of a complete solution carries a generating function: the line
integral of the momentum section.  This module recovers those
characteristic functions by quadrature, verifies the classical equation
through energy constancy, and builds kinetic-plus-potential Hamiltonians
from a cometric matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances
from .construct import CompleteSolution
from .expr import ScalarField, Var, parse, serialize
from .verify import ResidualReport, _collect


class QuadratureError(RuntimeError):
    """The adaptive line integral failed to settle."""


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_MAX_BISECTIONS = 12
_QUAD_TOL = 1e-10


@dataclass(frozen=True)
class CharacteristicFunction:
    """A generating function W with dW = momentum section at fixed lam.

    Values come from integrating the momentum section along straight
    segments from the anchor q0 (the domain box is convex); the gradient
    is the section itself, no differentiation involved.
    """

    solution: CompleteSolution
    lam: np.ndarray
    q0: np.ndarray

    def __post_init__(self):
        if self.solution.k != self.solution.dimension_s:
            raise ValueError(
                "characteristic functions need the position projection (k = s)"
            )

    @property
    def dimension_s(self) -> int:
        return self.solution.dimension_s

    def section(self, q) -> np.ndarray:
        """Momentum section: the p-part of the solution at (q, lam)."""
        q = np.asarray(q, dtype=float)
        return self.solution(q, self.lam)[self.dimension_s:]

    def gradient(self, q) -> np.ndarray:
        return self.section(q)

    def value(self, q) -> float:
        q = np.asarray(q, dtype=float)
        dq = q - self.q0
        if not np.any(dq):
            return 0.0

        def integrand(t: float) -> float:
            return float(self.section(self.q0 + t * dq) @ dq)

        return _adaptive_segment(integrand, 0.0, 1.0, _MAX_BISECTIONS)

    def __call__(self, q) -> float:
        return self.value(q)


def _gauss_segment(f, a: float, b: float) -> float:
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    return half * sum(
        w * f(mid + half * t) for t, w in zip(_GL_NODES, _GL_WEIGHTS)
    )


def _adaptive_segment(f, a: float, b: float, depth: int) -> float:
    whole = _gauss_segment(f, a, b)
    mid = 0.5 * (a + b)
    split = _gauss_segment(f, a, mid) + _gauss_segment(f, mid, b)
    if abs(whole - split) <= _QUAD_TOL * (1.0 + abs(split)):
        return split
    if depth == 0:
        raise QuadratureError(
            f"line integral did not settle on [{a}, {b}]: "
            f"levels differ by {abs(whole - split):.3e}"
        )
    return _adaptive_segment(f, a, mid, depth - 1) + _adaptive_segment(
        f, mid, b, depth - 1
    )


def characteristic_function(
    solution: CompleteSolution, lam, q0
) -> CharacteristicFunction:
    """Anchor a characteristic function at q0 for one parameter value."""
    lam = np.asarray(lam, dtype=float)
    q0 = np.asarray(q0, dtype=float)
    if not solution.in_domain(q0, lam):
        raise ValueError("(q0, lam) must lie in the validated domain boxes")
    return CharacteristicFunction(solution, lam, q0)


def characteristic_family(
    solution: CompleteSolution, grid: int, q0=None
) -> list[CharacteristicFunction]:
    """Characteristic functions on a regular parameter grid.

    grid points per parameter axis, slightly inset from the box edges;
    q0 defaults to the center of the position box.
    """
    if q0 is None:
        q0 = solution.n_box.mean(axis=1)
    axes = [
        np.linspace(lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo), grid)
        for lo, hi in solution.lambda_box
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    lams = np.column_stack([m.ravel() for m in mesh])
    return [characteristic_function(solution, lam, q0) for lam in lams]


def verify_characteristic(
    W: CharacteristicFunction,
    hamiltonian: ScalarField,
    probes: int = 50,
    seed: int = 0,
    tolerance: float = 1e-6,
    margin: float = 0.9,
) -> ResidualReport:
    """Energy constancy along the section: H(q, dW(q)) must not move.

    The classical equation asks H composed with the gradient to be
    constant in q; the report carries the worst drift from the value at
    the anchor point.
    """
    box = W.solution.n_box
    mid = box.mean(axis=1)
    half = margin * (box[:, 1] - box[:, 0]) / 2.0
    rng = np.random.default_rng(seed)
    qs = mid + rng.uniform(-1.0, 1.0, size=(probes, box.shape[0])) * half

    def energy(q: np.ndarray) -> float:
        return hamiltonian.value(np.concatenate([q, W.section(q)]))

    ref = energy(W.q0)
    residuals = [abs(energy(q) - ref) for q in qs]
    return _collect("characteristic_constancy", residuals, qs, tolerance, seed)


# ---------------------------------------------------------------------------
# simple Hamiltonians


def _reject_momenta(node, what: str) -> None:
    if isinstance(node, Var) and node.kind == "p":
        raise ValueError(f"{what} must depend on positions only")
    for child in getattr(node, "__dict__", {}).values():
        if hasattr(child, "__dataclass_fields__"):
            _reject_momenta(child, what)


@dataclass(frozen=True)
class SimpleHamiltonian:
    """Kinetic energy of a position-dependent cometric plus a potential.

    Symmetry of the cometric is structural: entries across the diagonal
    must parse to identical syntax trees.  Positive definiteness is a
    pointwise property and is checked on demand.
    """

    cometric_sources: tuple[tuple[str, ...], ...]
    potential_source: str
    dimension_s: int

    @cached_property
    def hamiltonian(self) -> ScalarField:
        s = self.dimension_s
        terms = []
        for i in range(s):
            for j in range(s):
                terms.append(f"({self.cometric_sources[i][j]})*p{i + 1}*p{j + 1}")
        source = "(" + " + ".join(terms) + f")/2 + ({self.potential_source})"
        return ScalarField.parse(source, s)

    @cached_property
    def _cometric_fields(self) -> tuple[tuple[ScalarField, ...], ...]:
        s = self.dimension_s
        return tuple(
            tuple(ScalarField.parse(src, s) for src in row)
            for row in self.cometric_sources
        )

    def cometric_value(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        x = np.concatenate([q, np.zeros(self.dimension_s)])
        return np.array(
            [[f.value(x) for f in row] for row in self._cometric_fields]
        )

    def check_positive_definite(self, q_points) -> None:
        """Raise if the cometric loses positive definiteness at a point."""
        for q in np.atleast_2d(np.asarray(q_points, dtype=float)):
            G = self.cometric_value(q)
            if np.min(np.linalg.eigvalsh(G)) <= 0.0:
                raise ValueError(
                    f"cometric is not positive definite at q = {tuple(q)}"
                )

    def projection_test(self, m) -> np.ndarray:
        """Position components of the Hamiltonian field at m.

        For a simple Hamiltonian these must equal the cometric applied to
        the momentum, vanishing exactly on the zero section.
        """
        m = np.asarray(m, dtype=float)
        return self.hamiltonian.gradient(m)[self.dimension_s:]


def simple_hamiltonian(
    cometric: Sequence[Sequence[str]],
    potential: str,
    dimension_s: int,
) -> SimpleHamiltonian:
    """Assemble and validate a simple Hamiltonian from source texts."""
    s = dimension_s
    rows = tuple(tuple(str(e) for e in row) for row in cometric)
    if len(rows) != s or any(len(row) != s for row in rows):
        raise ValueError(f"cometric must be a {s}x{s} matrix of expressions")
    asts = [[parse(entry, s) for entry in row] for row in rows]
    for i in range(s):
        for j in range(s):
            _reject_momenta(asts[i][j], "cometric entries")
            if asts[i][j] != asts[j][i]:
                raise ValueError(
                    f"cometric is not symmetric: entry ({i + 1},{j + 1}) is "
                    f"{serialize(asts[i][j])!r} but ({j + 1},{i + 1}) is "
                    f"{serialize(asts[j][i])!r}"
                )
    _reject_momenta(parse(potential, s), "the potential")
    return SimpleHamiltonian(rows, str(potential), s)
