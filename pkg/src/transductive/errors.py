"""Exception types shared across the library."""


class TransductiveError(Exception):
    """Base class for all library-specific errors."""


class NonConvergence(TransductiveError):
    """Comparator solver failed to reach the gradient tolerance."""


class DomainError(TransductiveError):
    """An input lies outside the mathematical domain of an operation."""


class SingularPotential(TransductiveError):
    """Quadratic potential is not strictly positive definite."""


class CholeskyFailure(TransductiveError):
    """Precision matrix is not positive definite."""


class DesignMismatch(TransductiveError):
    """A revealed covariate is not part of the declared design set."""


class IdentityViolation(TransductiveError):
    """A deterministic identity check exceeded its tolerance (implementation bug)."""


class EstimatorBudgetExceeded(TransductiveError):
    """A Monte Carlo estimator cannot certify its target accuracy within budget."""


class SamplerBudgetExceeded(EstimatorBudgetExceeded):
    """A sampling-based predictor exceeded its certified sample budget."""


class IntractableDimension(TransductiveError):
    """Support enumeration would exceed the configured combinatorial budget."""


class IntractableScale(TransductiveError):
    """Expert enumeration would exceed the configured budget."""


class NotInSlab(TransductiveError):
    """Prediction requested at a covariate outside the expert's subset."""


class DivergenceDetected(TransductiveError):
    """A Langevin chain escaped to numerically unbounded values."""


class UnboundedRatio(TransductiveError):
    """Sampled potential difference exceeded its declared bound."""


class ConfigError(TransductiveError):
    """Experiment configuration failed validation."""


class IoError(TransductiveError):
    """File emission failed."""
