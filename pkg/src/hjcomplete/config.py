"""Shared numerical tolerances.

Every rank test, Newton solve and residual check in the package reads its
threshold from a Tolerances instance instead of a literal at the call site,
so a single object controls the numerical policy of a whole run.
"""

from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Tolerances:
    """Numerical thresholds threaded through the toolkit.

    rank        relative singular value cutoff for all rank decisions
    newton      residual norm at which Newton iterations stop
    ode_abs     absolute error target of the adaptive integrator
    ode_rel     relative error target of the adaptive integrator
    residual    default acceptance threshold for verification residuals
    frobenius   span membership threshold for bracket closure tests; FD
                differentiated procedural fields make this the noisiest
                quantity in the system, hence the looser default
    fd_step     central difference step used by test oracles and fallback
                Jacobians of procedural fields
    """

    rank: float = 1e-9
    newton: float = 1e-10
    ode_abs: float = 1e-10
    ode_rel: float = 1e-10
    residual: float = 1e-5
    frobenius: float = 1e-4
    fd_step: float = 1e-6

    def with_(self, **kwargs) -> "Tolerances":
        return replace(self, **kwargs)


DEFAULT_TOLERANCES = Tolerances()
