"""
Exception hierarchy for the planner package.

Every failure raised on purpose by pbdplan derives from PlannerError, so
callers (the CLI, the HTTP routers) can catch one type and report it.
"""


class PlannerError(Exception):
    """Base class for all pbdplan errors"""


# ===== Numerical failures =====

class SingularCovariance(PlannerError):
    """A covariance that must be positive definite is singular"""


class NumericalFailure(PlannerError):
    """A matrix decomposition failed even after PSD repair"""


class UnsupportedOrder(PlannerError):
    """Requested Gaussian moment order exceeds the configured cap"""


class DimensionError(PlannerError, ValueError):
    """Vector/matrix shapes do not agree"""


class LinkEvaluationError(PlannerError):
    """Exponential-family link produced an invalid linearization"""


# ===== Planning contract failures =====

class GeneratorContractViolation(PlannerError):
    """Macro-action generator broke its contract (empty set, uncovered actions)"""


class UnsupportedDomain(PlannerError):
    """Planner kind cannot run on the given domain"""


class InvalidInput(PlannerError, ValueError):
    """Argument outside its documented range"""


class InvalidPose(PlannerError, ValueError):
    """Agent pose outside the valid region (e.g. altitude <= 0)"""


# ===== Configuration =====

class ConfigError(PlannerError):
    """Scenario or experiment file cannot be used"""
