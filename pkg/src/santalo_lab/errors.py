"""Exception types shared across the laboratory.

Each class carries a stable machine-readable ``code`` so the CLI can emit
structured error objects.
"""


class SantaloError(Exception):
    code = "ERROR"


class SpectrumError(SantaloError):
    """A matrix fails a definiteness requirement (indefinite or singular)."""

    code = "SPECTRUM"


class SimplexViolation(SantaloError):
    """Weight vector is not a strictly positive probability vector."""

    code = "SIMPLEX_VIOLATION"


class SizeGuardExceeded(SantaloError):
    """Problem size exceeds the guard for exact enumeration."""

    code = "SIZE_GUARD"


class DomainTooSmall(SantaloError):
    """Grid support touches the boundary; caller must enlarge the domain."""

    code = "DOMAIN_TOO_SMALL"


class ConvergenceFailure(SantaloError):
    """An iterative solver exhausted its budget without converging."""

    code = "NO_CONVERGENCE"


class HypothesisViolated(SantaloError):
    """Input violates the hypothesis of the inequality being checked."""

    code = "HYPOTHESIS_VIOLATED"


class UndefinedBarycenter(SantaloError):
    """Potential has no integrable mass, so its barycenter is undefined."""

    code = "UNDEFINED_BARYCENTER"
