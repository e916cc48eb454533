"""Construction of commuting isotropic frames and complete solutions.

The central algorithm extends the frame {X_H} one Hamiltonian field at a
time until it has k members, each new field pulled from the coordinate
differentials of a flow-box chart over the current frame.  The resulting
chart coordinates y_{k+1}..y_{2s} restrict to a submersion whose level
sets are tangent to the flow, and inverting (fibration, submersion)
jointly yields a complete solution of the associated Hamilton-Jacobi
problem.

Charts are stacked: level 1 rectifies X_H in phase space, level j >= 2
rectifies the next lifted field in the coordinates of level j-1, where
the first j-1 frame fields have already become constant.  Because every
frame field is Hamiltonian and the fields commute, the pulled-back
Poisson matrix in level coordinates is available algebraically from the
slice data alone (see _level_poisson); no integration is needed to
evaluate lifted fields in chart coordinates.  Numerical integration only
enters through the level-1 chart and through chart domain validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg

from .config import DEFAULT_TOLERANCES, Tolerances
from .expr import MapField, ProceduralScalar, ScalarField
from .flows import ChartError, FlowBoxChart, FlowError, IntegratorSettings
from .newton import NewtonError, newton_solve
from .symplectic import (
    Subspace,
    VectorField,
    classify,
    fd_jacobian,
    hamiltonian_vf,
    nullspace,
    numerical_rank,
    omega,
    structure_matrix,
)


class HypothesisError(RuntimeError):
    """A construction hypothesis failed at the base point."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class FrameExtensionError(RuntimeError):
    """No admissible index b was found, or a precondition broke."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConstructionError(RuntimeError):
    """A constructed object failed its own verification."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class FibrationError(RuntimeError):
    """The direction supplied to the fibration builder is unusable."""


class TransversalityError(RuntimeError):
    """The stacked Jacobian of (fibration, integrals) is singular."""


class DualityError(RuntimeError):
    """Complete-solution domain validation could not be satisfied."""


class DomainBoxError(ValueError):
    """Evaluation requested outside a validated domain box."""


# ---------------------------------------------------------------------------
# chart tower


def _constant_field(vector: np.ndarray, dim_s: int, label: str) -> VectorField:
    n = vector.shape[0]
    zero = np.zeros((n, n))
    return VectorField(
        lambda x, v=vector: v.copy(),
        lambda x, z=zero: z.copy(),
        dim_s,
        kind="analytic",
        label=label,
    )


def _level_poisson(chart: FlowBoxChart, parent: Callable) -> Callable:
    """Poisson matrix field in the coordinates of `chart`.

    With frame fields Hamiltonian and mutually commuting, the chart
    Jacobian factors as Dpsi(y) = W Q(z) with z the slice point for the
    tail of y, Q(z) = [X_1(z) .. X_r(z) | S], and W the composite flow
    tangent.  W preserves the parent Poisson matrix, so the pullback
    collapses to Q(z)^{-1} L(z) Q(z)^{-T}: the matrix depends on the tail
    coordinates only, and costs one frame evaluation at the slice.
    """
    base = chart.basepoint
    S = chart.slice_basis
    frame = chart.frame
    r = len(frame)
    n = base.shape[0]

    def lam(y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        z = base + S @ y[r:]
        Q = np.empty((n, n))
        for i, fld in enumerate(frame):
            Q[:, i] = fld(z)
        Q[:, r:] = S
        Qinv = np.linalg.inv(Q)
        return Qinv @ parent(z) @ Qinv.T

    return lam


def _canonical_poisson(dim_s: int) -> Callable:
    J = structure_matrix(dim_s)

    def lam(z: np.ndarray) -> np.ndarray:
        return J

    return lam


@dataclass(frozen=True)
class ChartTower:
    """A stack of flow-box charts, each living in the coordinates of the
    previous one.  charts[0] maps its coordinates into phase space;
    charts[j] maps into the coordinate space of charts[j-1].  poissons
    has one extra entry: poissons[j] is the Poisson matrix field of the
    level-j coordinate space (poissons[0] is canonical)."""

    charts: tuple[FlowBoxChart, ...]
    poissons: tuple[Callable, ...]
    dimension_s: int

    @property
    def depth(self) -> int:
        return len(self.charts)

    def extended(self, chart: FlowBoxChart) -> "ChartTower":
        lam = _level_poisson(chart, self.poissons[-1])
        return ChartTower(
            self.charts + (chart,), self.poissons + (lam,), self.dimension_s
        )

    def with_permuted_tail(self, perm: Sequence[int]) -> "ChartTower":
        """Permute the tail coordinates of the deepest chart.

        perm lists old tail-column indices in their new order.  The chart
        image and its validated radius are unchanged; only the labelling
        of the slice directions moves.
        """
        deep = self.charts[-1]
        new_chart = replace(deep, slice_basis=deep.slice_basis[:, list(perm)])
        lam = _level_poisson(new_chart, self.poissons[-2])
        return ChartTower(
            self.charts[:-1] + (new_chart,),
            self.poissons[:-1] + (lam,),
            self.dimension_s,
        )

    def forward(self, y: np.ndarray) -> np.ndarray:
        eta = np.asarray(y, dtype=float)
        for chart in reversed(self.charts):
            eta = chart.forward(eta)
        return eta

    def forward_and_jacobian(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        eta = np.asarray(y, dtype=float)
        D = None
        for chart in reversed(self.charts):
            eta, Dj = chart.forward_and_jacobian(eta)
            D = Dj if D is None else Dj @ D
        return eta, D

    def solve_stack(
        self, x: np.ndarray, guesses: Optional[Sequence[np.ndarray]] = None
    ) -> list[np.ndarray]:
        """Coordinates of x at every level, outermost first."""
        eta = np.asarray(x, dtype=float)
        stack = []
        for j, chart in enumerate(self.charts):
            y0 = None if guesses is None else guesses[j]
            eta = chart.inverse(eta, y0=y0)
            stack.append(eta)
        return stack


@dataclass
class _TowerEntry:
    stack: list[np.ndarray]
    jac: Optional[np.ndarray] = None  # D(Psi) at the solved coordinates
    jac_inv: Optional[np.ndarray] = None

    @property
    def coords(self) -> np.ndarray:
        return self.stack[-1]


class TowerIndex:
    """Memoized inversion of a chart tower.

    Solutions are keyed by the raw bytes of the query point, so repeat
    evaluations (e.g. value and gradient of several integral components
    at one probe) cost a single solve.  The most recent solution seeds
    the next Newton run; a failed warm start falls back to a cold one,
    which the chart's validated radius guarantees for in-domain points.
    """

    _MEMO_LIMIT = 50_000

    def __init__(self, tower: ChartTower):
        self.tower = tower
        self._memo: dict[bytes, _TowerEntry] = {}
        self._last: Optional[_TowerEntry] = None

    def solve(self, x: np.ndarray, need_jacobian: bool = False) -> _TowerEntry:
        x = np.asarray(x, dtype=float)
        key = x.tobytes()
        entry = self._memo.get(key)
        if entry is None:
            entry = self._solve_fresh(x)
            if len(self._memo) >= self._MEMO_LIMIT:
                self._memo.clear()
            self._memo[key] = entry
        self._last = entry
        if need_jacobian and entry.jac is None:
            _, D = self.tower.forward_and_jacobian(entry.coords)
            entry.jac = D
            entry.jac_inv = np.linalg.inv(D)
        return entry

    def _solve_fresh(self, x: np.ndarray) -> _TowerEntry:
        if self._last is not None:
            try:
                return _TowerEntry(self.tower.solve_stack(x, self._last.stack))
            except (ChartError, NewtonError, FlowError):
                pass
        return _TowerEntry(self.tower.solve_stack(x))


# ---------------------------------------------------------------------------
# hypothesis checks


@dataclass(frozen=True)
class AssumptionReport:
    """Outcome of the two construction hypotheses at a base point."""

    dimension_s: int
    k: int
    l: int
    submersion_ok: bool
    flow_transverse: bool  # X_H(m) not in Ker DPi(m)
    kernel_coisotropic: bool
    kernel_class: object
    messages: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return self.submersion_ok and self.flow_transverse and self.kernel_coisotropic


def check_assumptions(
    hamiltonian: ScalarField,
    fibration: MapField,
    basepoint,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> AssumptionReport:
    """Check the two hypotheses the construction rests on at basepoint.

    (i) the Hamiltonian field must leave the fibres (X_H(m) outside the
    kernel of the fibration differential) and (ii) that kernel must be
    coisotropic.  The fibration itself must be a submersion at m.
    """
    m = np.asarray(basepoint, dtype=float)
    s = fibration.dimension_s
    if m.shape != (2 * s,):
        raise ValueError(f"basepoint must have length {2 * s}")
    if hamiltonian.dimension_s != s:
        raise ValueError("hamiltonian and fibration dimensions disagree")
    k = fibration.target_dim
    l = 2 * s - k
    messages = []

    DPi = fibration.jacobian(m)
    rank = numerical_rank(DPi, tolerances.rank)
    submersion_ok = rank == k
    if not submersion_ok:
        messages.append(f"fibration rank {rank} < {k} at base point")
        return AssumptionReport(s, k, l, False, False, False, None, tuple(messages))

    kernel = nullspace(DPi, tolerances.rank)
    ker = Subspace(m, kernel, tolerances.rank)
    xh = hamiltonian_vf(hamiltonian, tolerances)(m)
    stacked = np.hstack([kernel, xh[:, None]])
    flow_transverse = numerical_rank(stacked, tolerances.rank) == kernel.shape[1] + 1
    if not flow_transverse:
        messages.append("Hamiltonian field at the base point is tangent to the fibre")

    cls = classify(ker)
    if not cls.coisotropic:
        messages.append("fibre tangent space is not coisotropic at the base point")

    return AssumptionReport(
        s, k, l, True, flow_transverse, cls.coisotropic, cls, tuple(messages)
    )


# ---------------------------------------------------------------------------
# frame state and extension


@dataclass(frozen=True)
class FrameState:
    """Current commuting frame together with its chart tower.

    fields hold the frame as honest phase-space vector fields (the first
    is always the Hamiltonian field; later ones are procedural and carry
    finite-difference Jacobians).  tower holds one chart per field.
    """

    hamiltonian: ScalarField
    fibration: MapField
    basepoint: np.ndarray
    fields: tuple[VectorField, ...]
    tower: ChartTower
    kernel_basis: np.ndarray
    b_history: tuple[int, ...]
    tolerances: Tolerances
    settings: IntegratorSettings
    initial_radius: float

    @property
    def r(self) -> int:
        return len(self.fields)

    @property
    def k(self) -> int:
        return self.fibration.target_dim

    @property
    def dimension_s(self) -> int:
        return self.fibration.dimension_s

    @property
    def chart(self) -> FlowBoxChart:
        return self.tower.charts[-1]


def init_frame(
    hamiltonian: ScalarField,
    fibration: MapField,
    basepoint,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    settings: Optional[IntegratorSettings] = None,
    initial_radius: float = 0.5,
) -> FrameState:
    """Start the frame at {X_H} with its rectifying chart."""
    settings = settings or IntegratorSettings(
        abs_tol=tolerances.ode_abs, rel_tol=tolerances.ode_rel
    )
    report = check_assumptions(hamiltonian, fibration, basepoint, tolerances)
    if not report.passed:
        raise HypothesisError(
            "construction hypotheses fail at the base point: "
            + "; ".join(report.messages),
            report,
        )
    m = np.asarray(basepoint, dtype=float)
    s = fibration.dimension_s
    xh = hamiltonian_vf(hamiltonian, tolerances)
    chart = FlowBoxChart.build(
        m, (xh,), settings, tolerances, initial_radius=initial_radius
    )
    tower = ChartTower((), (_canonical_poisson(s),), s).extended(chart)
    kernel = nullspace(fibration.jacobian(m), tolerances.rank)
    return FrameState(
        hamiltonian=hamiltonian,
        fibration=fibration,
        basepoint=m,
        fields=(xh,),
        tower=tower,
        kernel_basis=kernel,
        b_history=(),
        tolerances=tolerances,
        settings=settings,
        initial_radius=initial_radius,
    )


def _lifted_x_field(
    tower: ChartTower, index: TowerIndex, b: int, dim_s: int, fd_step: float
) -> VectorField:
    """The lifted coordinate field as a phase-space vector field.

    Evaluation pulls x back to chart coordinates, reads the lifted field
    off the tower's Poisson matrix, and pushes it forward again.
    """
    lam = tower.poissons[-1]

    def evaluator(x: np.ndarray) -> np.ndarray:
        entry = index.solve(x, need_jacobian=True)
        return entry.jac @ lam(entry.coords)[:, b]

    def jac(x: np.ndarray) -> np.ndarray:
        return fd_jacobian(evaluator, x, fd_step)

    return VectorField(
        evaluator,
        jac,
        dim_s,
        kind="procedural",
        jacobian_is_fd=True,
        label=f"lift[y{b + 1}]",
    )


def _validate_frame_invariants(state: FrameState) -> None:
    m = state.basepoint
    vals = np.column_stack([fld(m) for fld in state.fields])
    r = state.r
    tol = state.tolerances
    worst = 0.0
    for i in range(r):
        for j in range(i + 1, r):
            worst = max(worst, abs(omega(vals[:, i], vals[:, j])))
    if worst > tol.residual:
        raise FrameExtensionError(
            f"frame is not isotropic at the base point: |omega| = {worst:.3e}",
            {"pairwise_omega": worst},
        )
    if numerical_rank(vals, tol.rank) != r:
        raise FrameExtensionError("frame fields are dependent at the base point")
    stacked = np.hstack([vals, state.kernel_basis])
    want = r + state.kernel_basis.shape[1]
    got = numerical_rank(stacked, tol.rank)
    if got != want:
        raise FrameExtensionError(
            f"frame span meets the fibre tangent space: rank {got} < {want}"
        )


def extend_frame(state: FrameState) -> FrameState:
    """Append one commuting Hamiltonian field to the frame.

    Rectifies the current frame (the tower already holds the charts),
    reorders the tail coordinates so the coefficient matrix of the frame
    against the coordinate fields has an invertible trailing block, then
    scans the admissible tail coordinates for one whose lifted field is
    transverse to both the frame and the fibre, preferring the best
    conditioned choice.
    """
    r = state.r
    k = state.k
    n = 2 * state.dimension_s
    if r >= k:
        raise FrameExtensionError(f"frame already has {r} >= k = {k} fields")
    _validate_frame_invariants(state)
    tol = state.tolerances

    # Coefficients of the constant frame directions against the lifted
    # coordinate fields, read from the inverse Poisson matrix at the
    # chart origin: e_i = sum_a c_i^a L e_a with c_i = L^{-1} e_i.
    lam0 = state.tower.poissons[-1](np.zeros(n))
    lam0_inv = np.linalg.inv(lam0)
    head = lam0_inv[:r, :r]
    if np.max(np.abs(head)) > tol.residual:
        raise FrameExtensionError(
            "chart coordinate fields are not orthogonal to the frame: "
            f"head coefficient {np.max(np.abs(head)):.3e}",
            {"head_coefficients": head},
        )
    coeff = lam0_inv[r:, :r].T  # (r, n - r): c_i^a over tail coordinates a

    # Pivoted QR picks r well-conditioned tail columns; they move to the
    # rear so the trailing r x r block is invertible and the scan below
    # ranges over the surviving leading columns.
    _, _, piv = scipy.linalg.qr(coeff, mode="economic", pivoting=True)
    chosen = sorted(piv[:r])
    leading = [a for a in range(n - r) if a not in set(chosen)]
    perm = leading + chosen
    if np.linalg.matrix_rank(coeff[:, chosen], tol=tol.rank) < r:
        raise FrameExtensionError("coefficient matrix has no invertible trailing block")
    tower = state.tower.with_permuted_tail(perm)

    lam0 = tower.poissons[-1](np.zeros(n))
    frame_vals = np.column_stack([fld(state.basepoint) for fld in state.fields])
    _, D0 = tower.forward_and_jacobian(np.zeros(n))

    best_b = None
    best_score = -np.inf
    deficits: dict[int, int] = {}
    want = r + 1 + state.kernel_basis.shape[1]
    for b in range(r, n - r):
        candidate = D0 @ lam0[:, b]
        stacked = np.column_stack([frame_vals, candidate, state.kernel_basis])
        sv = np.linalg.svd(stacked, compute_uv=False)
        rank = int(np.sum(sv > tol.rank * sv[0])) if sv[0] > 0 else 0
        if rank == want:
            score = sv[want - 1]
            if score > best_score:
                best_score = score
                best_b = b
        else:
            deficits[b] = want - rank
    if best_b is None:
        raise FrameExtensionError(
            "no admissible lifted field: every candidate is tangent to the "
            "span of the frame and the fibre",
            {"rank_deficits": deficits, "target_rank": want},
        )

    index = TowerIndex(tower)
    new_field = _lifted_x_field(
        tower, index, best_b, state.dimension_s, tol.fd_step
    )

    # Next chart lives in the current tower coordinates, where the old
    # frame is constant and the new field is algebraic in the Poisson
    # matrix.  Isotropy of the enlarged frame is automatic there.
    lam_fn = tower.poissons[-1]
    consts = tuple(
        _constant_field(np.eye(n)[:, i], state.dimension_s, f"e{i + 1}")
        for i in range(r)
    )
    lifted = VectorField(
        lambda y, fn=lam_fn, b=best_b: fn(y)[:, b],
        lambda y, fn=lam_fn, b=best_b, h=tol.fd_step: fd_jacobian(
            lambda z: fn(z)[:, b], y, h
        ),
        state.dimension_s,
        kind="procedural",
        jacobian_is_fd=True,
        label=f"ghat[y{best_b + 1}]",
    )
    try:
        new_chart = FlowBoxChart.build(
            np.zeros(n),
            consts + (lifted,),
            state.settings,
            tol,
            initial_radius=state.initial_radius,
            poisson=lam_fn,
        )
    except ChartError as exc:
        raise FrameExtensionError(f"chart construction failed: {exc}") from exc

    return replace(
        state,
        fields=state.fields + (new_field,),
        tower=tower.extended(new_chart),
        b_history=state.b_history + (best_b,),
    )


# ---------------------------------------------------------------------------
# first integrals


@dataclass(frozen=True)
class FirstIntegralSubmersion:
    """A submersion whose level sets absorb the Hamiltonian flow.

    integrals is a map with l = 2s - k procedural components: the tail
    coordinates of the final chart tower.  Component values and gradients
    share one memoized tower inversion, so evaluating all of them at a
    point costs a single Newton solve.
    """

    integrals: MapField
    state: FrameState
    index: TowerIndex
    diagnostics: dict

    @property
    def dimension_s(self) -> int:
        return self.state.dimension_s

    @property
    def k(self) -> int:
        return self.state.k

    @property
    def l(self) -> int:
        return 2 * self.dimension_s - self.k

    def sample_points(
        self, count: int, seed: int = 0, margin: float = 0.5
    ) -> np.ndarray:
        """Phase-space probes inside the validated chart domain."""
        n = 2 * self.dimension_s
        radius = margin * min(c.domain_radius for c in self.state.tower.charts)
        rng = np.random.default_rng(seed)
        ys = rng.uniform(-radius, radius, size=(count, n))
        return np.array([self.state.tower.forward(y) for y in ys])


def _integral_components(
    tower: ChartTower, index: TowerIndex, k: int, dim_s: int
) -> tuple[ProceduralScalar, ...]:
    comps = []
    for i in range(k, 2 * dim_s):
        def value(x, i=i):
            return float(index.solve(x).coords[i])

        def gradient(x, i=i):
            return index.solve(x, need_jacobian=True).jac_inv[i].copy()

        comps.append(
            ProceduralScalar(value, gradient, dim_s, label=f"y{i + 1}")
        )
    return tuple(comps)


def build_first_integrals(
    hamiltonian: ScalarField,
    fibration: MapField,
    basepoint,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    settings: Optional[IntegratorSettings] = None,
    initial_radius: float = 0.5,
    probes: int = 50,
    seed: int = 0,
) -> FirstIntegralSubmersion:
    """Run the frame extension to completion and verify the result.

    Extends from {X_H} to k fields, takes the final chart's tail
    coordinates as integral components, and checks at seeded probes that
    the components annihilate the Hamiltonian field, stay jointly
    transverse to the fibration, and cut out isotropic kernels.
    """
    state = init_frame(
        hamiltonian, fibration, basepoint, tolerances, settings, initial_radius
    )
    while state.r < state.k:
        state = extend_frame(state)

    index = TowerIndex(state.tower)
    comps = _integral_components(index.tower, index, state.k, state.dimension_s)
    integrals = MapField(comps, state.dimension_s)

    xh = state.fields[0]
    points = FirstIntegralSubmersion(
        integrals, state, index, {}
    ).sample_points(probes, seed)

    drift = 0.0
    transverse = True
    gram = 0.0
    for x in points:
        dF = integrals.jacobian(x)
        drift = max(drift, float(np.max(np.abs(dF @ xh(x)))))
        stacked = np.vstack([fibration.jacobian(x), dF])
        if numerical_rank(stacked, tolerances.rank) != 2 * state.dimension_s:
            transverse = False
        kernel = nullspace(dF, tolerances.rank)
        JK = np.column_stack(
            [np.concatenate([v[state.dimension_s:], -v[: state.dimension_s]])
             for v in kernel.T]
        )
        gram = max(gram, float(np.max(np.abs(kernel.T @ JK))))

    diagnostics = {
        "flow_drift": drift,
        "transversality": transverse,
        "kernel_gram": gram,
        "probes": probes,
        "seed": seed,
        "b_history": state.b_history,
        "chart_radii": tuple(c.domain_radius for c in state.tower.charts),
    }
    failures = []
    if drift > tolerances.residual:
        failures.append(f"flow drift {drift:.3e}")
    if not transverse:
        failures.append("transversality rank failed at a probe")
    if gram > tolerances.residual:
        failures.append(f"kernel isotropy gram {gram:.3e}")
    if failures:
        raise ConstructionError(
            "constructed integrals failed verification: " + "; ".join(failures),
            diagnostics,
        )
    return FirstIntegralSubmersion(integrals, state, index, diagnostics)


# ---------------------------------------------------------------------------
# fibration builder


@dataclass(frozen=True)
class FibrationPlan:
    """A coisotropic fibration adapted to a flow direction.

    pi projects onto k Darboux position coordinates, after an optional
    canonical swap (q, p) -> (-p, q) and a swap of coordinate 1 with the
    strongest direction.  sources carry the component expressions in the
    original coordinates.
    """

    pi: MapField
    k: int
    swap_applied: bool
    q_order: tuple[int, ...]  # 0-based original q-indices, new order
    sources: tuple[str, ...]


def build_fibration(X: VectorField, basepoint, k: int) -> FibrationPlan:
    """Choose Darboux positions whose fibres dodge the given direction.

    If the direction at the base point has no q-component, the canonical
    swap turns momenta into positions first; the strongest remaining
    component is relabelled to the front so the first k positions always
    work.
    """
    m = np.asarray(basepoint, dtype=float)
    s = X.dimension_s
    if not 1 <= k <= s:
        raise FibrationError(f"fibre codimension k = {k} must satisfy 1 <= k <= {s}")
    v = X(m)
    scale = float(np.max(np.abs(v)))
    if scale == 0.0:
        raise FibrationError("direction vanishes at the base point")

    a = v[:s]
    swap = bool(np.max(np.abs(a)) <= 1e-12 * scale)
    if swap:
        a = -v[s:]
    j = int(np.argmax(np.abs(a)))
    order = list(range(s))
    order[0], order[j] = order[j], order[0]

    sources = tuple(
        (f"-p{idx + 1}" if swap else f"q{idx + 1}") for idx in order[:k]
    )
    pi = MapField.from_sources(sources, s)
    return FibrationPlan(pi, k, swap, tuple(order), sources)


# ---------------------------------------------------------------------------
# complete solutions and the duality


@dataclass
class CompleteSolution:
    """A parametrized family of isotropic submanifolds, given procedurally.

    Maps (n, lam) in validated axis-aligned boxes to phase-space points.
    The Jacobian evaluator returns the full square matrix with the n
    columns first.
    """

    dimension_s: int
    n_box: np.ndarray  # (k, 2) rows of [lo, hi]
    lambda_box: np.ndarray  # (l, 2)
    _evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray]
    _jacobian: Callable[[np.ndarray, np.ndarray], np.ndarray]
    label: str = ""

    @property
    def k(self) -> int:
        return self.n_box.shape[0]

    @property
    def l(self) -> int:
        return self.lambda_box.shape[0]

    def in_domain(self, n, lam) -> bool:
        n = np.asarray(n, dtype=float)
        lam = np.asarray(lam, dtype=float)
        return bool(
            np.all(n >= self.n_box[:, 0]) and np.all(n <= self.n_box[:, 1])
            and np.all(lam >= self.lambda_box[:, 0])
            and np.all(lam <= self.lambda_box[:, 1])
        )

    def __call__(self, n, lam) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        lam = np.asarray(lam, dtype=float)
        if not self.in_domain(n, lam):
            raise DomainBoxError("(n, lambda) outside the validated domain boxes")
        return self._evaluator(n, lam)

    def jacobian(self, n, lam) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        lam = np.asarray(lam, dtype=float)
        if not self.in_domain(n, lam):
            raise DomainBoxError("(n, lambda) outside the validated domain boxes")
        return self._jacobian(n, lam)

    def sample_domain(self, count: int, seed: int = 0, margin: float = 1.0):
        """Seeded (n, lam) samples across the boxes; margin < 1 shrinks
        towards the centers."""
        rng = np.random.default_rng(seed)
        boxes = np.vstack([self.n_box, self.lambda_box])
        mid = boxes.mean(axis=1)
        half = margin * (boxes[:, 1] - boxes[:, 0]) / 2.0
        pts = mid + rng.uniform(-1.0, 1.0, size=(count, boxes.shape[0])) * half
        return pts[:, : self.k], pts[:, self.k:]

    @classmethod
    def from_callables(
        cls,
        evaluator,
        jacobian,
        dimension_s: int,
        n_box,
        lambda_box,
        label: str = "",
    ) -> "CompleteSolution":
        return cls(
            dimension_s,
            np.asarray(n_box, dtype=float).reshape(-1, 2),
            np.asarray(lambda_box, dtype=float).reshape(-1, 2),
            evaluator,
            jacobian,
            label,
        )


_MIN_BOX_EDGE = 1e-3


def _integrals_map(F: Union[MapField, FirstIntegralSubmersion]) -> MapField:
    return F.integrals if isinstance(F, FirstIntegralSubmersion) else F


def solution_from_integrals(
    fibration: MapField,
    F: Union[MapField, FirstIntegralSubmersion],
    basepoint,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    validation_probes: int = 20,
    seed: int = 0,
) -> CompleteSolution:
    """Invert (fibration, integrals) into a complete solution.

    The stacked map is inverted by Newton iteration with continuation
    from the most recent solve.  Domain boxes start from the image of the
    construction chart (or a unit-scale default for analytic inputs) and
    are halved until every validation probe converges; shrinking below
    the minimum edge is an error.
    """
    m = np.asarray(basepoint, dtype=float)
    integrals = _integrals_map(F)
    s = integrals.dimension_s
    k = fibration.target_dim
    l = integrals.target_dim
    if k + l != 2 * s:
        raise ValueError("fibration and integrals must jointly have 2s components")

    def stacked_value(x: np.ndarray) -> np.ndarray:
        return np.concatenate([fibration.value(x), integrals.value(x)])

    def stacked_jac(x: np.ndarray) -> np.ndarray:
        return np.vstack([fibration.jacobian(x), integrals.jacobian(x)])

    DG = stacked_jac(m)
    if numerical_rank(DG, tolerances.rank) != 2 * s:
        raise TransversalityError(
            "stacked Jacobian of (fibration, integrals) is singular at the base point"
        )
    center = stacked_value(m)

    # Initial half-edges: reach of the stacked map over the construction
    # chart's validated ball, or a fixed fraction of scale for analytic F.
    if isinstance(F, FirstIntegralSubmersion):
        span = np.zeros(2 * s)
        for x in F.sample_points(32, seed=seed ^ 0x5EED, margin=0.8):
            span = np.maximum(span, np.abs(stacked_value(x) - center))
        half = 0.5 * span
    else:
        half = 0.15 * (1.0 + np.abs(center))
    half = np.maximum(half, _MIN_BOX_EDGE / 2.0)

    last: dict = {"x": m.copy()}

    def solve_point(target: np.ndarray) -> np.ndarray:
        def residual(x: np.ndarray) -> np.ndarray:
            return stacked_value(x) - target

        try:
            return newton_solve(
                residual,
                stacked_jac,
                last["x"],
                tol=tolerances.newton,
                max_iter=50,
            )
        except (NewtonError, ChartError, FlowError):
            x = newton_solve(
                residual, stacked_jac, m, tol=tolerances.newton, max_iter=50
            )
            return x

    def evaluator(n: np.ndarray, lam: np.ndarray) -> np.ndarray:
        x = solve_point(np.concatenate([n, lam]))
        last["x"] = x
        return x

    def jacobian(n: np.ndarray, lam: np.ndarray) -> np.ndarray:
        x = evaluator(n, lam)
        return np.linalg.inv(stacked_jac(x))

    # Validate by probing the box; halve on any failure.
    rng = np.random.default_rng(seed)
    probe_dirs = rng.uniform(-1.0, 1.0, size=(validation_probes, 2 * s))
    probe_dirs[np.abs(probe_dirs) < 0.25] = 0.25  # keep probes near faces
    while True:
        ok = True
        for d in probe_dirs:
            target = center + d * half
            try:
                x = solve_point(target)
            except (NewtonError, ChartError, FlowError):
                ok = False
                break
            last["x"] = x
        if ok:
            break
        half = half / 2.0
        if np.min(2.0 * half) < _MIN_BOX_EDGE:
            raise DualityError(
                "solution domain shrank below the minimum box edge during validation"
            )
        last["x"] = m.copy()

    n_box = np.column_stack([center[:k] - half[:k], center[:k] + half[:k]])
    lam_box = np.column_stack([center[k:] - half[k:], center[k:] + half[k:]])
    return CompleteSolution(
        s, n_box, lam_box, evaluator, jacobian, label="inverted (fibration, integrals)"
    )


def integrals_from_solution(
    solution: CompleteSolution,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> MapField:
    """Read first integrals off a complete solution.

    Components are the lambda-parameters of the Newton inversion of the
    solution map; gradients come from the inverse Jacobian.  All
    components share one continuation cache.
    """
    s = solution.dimension_s
    k, l = solution.k, solution.l
    mid = np.concatenate(
        [solution.n_box.mean(axis=1), solution.lambda_box.mean(axis=1)]
    )
    cache: dict = {"y": mid.copy(), "key": None, "x": None}

    def invert(x: np.ndarray) -> np.ndarray:
        key = x.tobytes()
        if cache["key"] == key:
            return cache["x"]

        # Newton trial steps may leave the validated boxes briefly, so
        # the box-checked public interface is bypassed here.
        def residual(y: np.ndarray) -> np.ndarray:
            return solution._evaluator(y[:k], y[k:]) - x

        def jac(y: np.ndarray) -> np.ndarray:
            return solution._jacobian(y[:k], y[k:])

        try:
            y = newton_solve(residual, jac, cache["y"], tol=tolerances.newton)
        except NewtonError:
            y = newton_solve(residual, jac, mid, tol=tolerances.newton)
        cache.update(y=y, key=key, x=y)
        return y

    comps = []
    for i in range(l):
        def value(x, i=i):
            return float(invert(np.asarray(x, dtype=float))[k + i])

        def gradient(x, i=i):
            x = np.asarray(x, dtype=float)
            y = invert(x)
            DS = solution._jacobian(y[:k], y[k:])
            return np.linalg.inv(DS)[k + i].copy()

        comps.append(ProceduralScalar(value, gradient, s, label=f"lambda{i + 1}"))
    return MapField(tuple(comps), s)
