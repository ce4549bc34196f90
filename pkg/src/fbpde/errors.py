"""Exception hierarchy shared by all fbpde modules."""


class FBPDEError(Exception):
    """Base class for all errors raised by this package."""


class OutOfRangeError(FBPDEError):
    """A scalar argument lies outside the admissible interval."""


class HypothesisViolatedError(FBPDEError):
    """A profile failed the sampled monotonicity / bound checks."""


class InvalidProfileError(FBPDEError):
    """Profile parameters violate a structural positivity condition."""


class WindowInvalidError(FBPDEError):
    """An (r1, r2) modification or oscillation window fails its preconditions."""


class ConstructionFailedError(FBPDEError):
    """A surrogate-profile construction could not satisfy its clauses.

    Carries the first violating sample point in ``args[1]`` when known.
    """


class StabilityFailureError(FBPDEError):
    """Inner Picard/Newton iteration of a time step failed to converge."""


class SingularSystemError(FBPDEError):
    """A linear solve broke its compatibility condition."""


class SubcriticalityViolatedError(FBPDEError):
    """A classical-regime run left the matched-flux region."""


class MeanNotZeroError(FBPDEError):
    """A field violates the per-slice zero-mean precondition."""


class ParameterDomainError(FBPDEError):
    """Arguments lie outside the admissible parameter domain of a formula."""


class PreconditionFailedError(FBPDEError):
    """A geometric precondition (ordering/orthogonality) does not hold."""


class NoConvergenceError(FBPDEError):
    """Newton iteration exhausted its iteration budget."""


class SingularJacobianError(FBPDEError):
    """The Newton Jacobian became numerically singular (carries the DET value)."""

    def __init__(self, message: str, det_value: float = float("nan")):
        super().__init__(message)
        self.det_value = det_value


class DivisionDegenerateError(FBPDEError):
    """The secant denominator sigma(|u|)/|u| - sigma(|v|)/|v| degenerated."""


class InfeasibleTauError(FBPDEError):
    """No tile period can satisfy the requested smallness parameter."""


class NoBoxesError(FBPDEError):
    """A surgery stage found no usable boxes (good set too small)."""


class WitnessFailureError(FBPDEError):
    """A rank-one witness could not be produced for a surgery box."""

    def __init__(self, message: str, box_id=None):
        super().__init__(message)
        self.box_id = box_id


class NotApplicableError(FBPDEError):
    """A diagnostic does not apply to the given profile or dimension."""
