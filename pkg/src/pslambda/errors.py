"""Exception hierarchy.

Every error carries a ``hypothesis`` tag naming the standing assumption that
failed (a crossing-point condition, the domain of the time-T map, the
clearance of a homoclinic point, ...) so the CLI can emit a structured report.
"""

from __future__ import annotations

from typing import Any


class PSVFError(Exception):
    """Base class for all toolkit errors."""

    hypothesis: str = "unspecified"
    kind: str = "error"

    def __init__(self, message: str, *, hypothesis: str | None = None, **details: Any):
        super().__init__(message)
        if hypothesis is not None:
            self.hypothesis = hypothesis
        self.details = details

    def report(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "error": self.kind,
            "message": str(self),
            "hypothesis": self.hypothesis,
        }
        for key, value in self.details.items():
            out[key] = _jsonable(value)
        return out


def _jsonable(value: Any) -> Any:
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return repr(value)


class DomainError(PSVFError):
    kind = "domain"
    hypothesis = "field or switching function evaluated outside its domain"


class MalformedSystemError(PSVFError):
    kind = "malformed-system"
    hypothesis = "crossing condition: exactly two components adjacent at the active surface"


class TangencyError(PSVFError):
    kind = "tangency"
    hypothesis = "crossing condition (iii): X^a h * X^b h > 0 cannot be certified"


class NonRegularError(PSVFError):
    kind = "non-regular"
    hypothesis = "crossing condition (ii): grad h != 0 fails"


class CrossingTimeError(PSVFError):
    kind = "crossing-time"
    hypothesis = "crossing condition (iii): implicit crossing time is not well defined"


class FlowObstruction(PSVFError):
    """A trajectory did not complete (non-crossing point, blow-up, domain exit)."""

    kind = "domain-exit"
    hypothesis = "domain of the time-T map: orbit must reach time T through crossing points only"

    def __init__(self, message: str, *, status: str = "", trajectory: Any = None, **details: Any):
        super().__init__(message, status=status, **details)
        self.status = status
        self.trajectory = trajectory


class JacobianUndefinedError(PSVFError):
    kind = "jacobian-undefined"
    hypothesis = "differentiability of the flow: endpoints must lie off the switching set"


class ConvergenceError(PSVFError):
    kind = "non-convergence"
    hypothesis = "Newton iteration failed to converge"


class NotHyperbolicError(PSVFError):
    kind = "not-hyperbolic"
    hypothesis = "fixed point must be hyperbolic (|alpha| != 1)"


class ChartError(PSVFError):
    kind = "chart"
    hypothesis = "adapted chart requires a well-conditioned eigenbasis"


class ShrinkRadiusError(PSVFError):
    kind = "shrink-radius"
    hypothesis = "local manifold seed must avoid the switching set"

    def __init__(self, message: str, *, max_radius: float, **details: Any):
        super().__init__(message, max_radius=max_radius, **details)
        self.max_radius = max_radius


class NotTransversalError(PSVFError):
    kind = "not-transversal"
    hypothesis = "disk must be transversal to W^s (v_0^u != 0)"


class HypothesisViolation(PSVFError):
    kind = "hypothesis-violation"
    hypothesis = "transversal intersection point q must lie off the switching set Omega"


class InfeasibleConstantsError(PSVFError):
    kind = "infeasible-constants"
    hypothesis = "inequalities a1<1, b>1, k<(b-1)^2/4, k<1, k1<min(eta,k)"


class ConfigError(PSVFError):
    kind = "config"
    hypothesis = "configuration must validate"


class DegenerateDiskError(PSVFError):
    kind = "degenerate-disk"
    hypothesis = "disk mesh must be injective with nondegenerate tangent frames"
