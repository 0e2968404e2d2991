"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature ran out of budget before reaching the tolerance.

    The best estimate found so far is kept on the exception so callers can
    still inspect it.
    """

    def __init__(self, message, value, abs_error_estimate, nodes_used):
        super().__init__(message)
        self.value = value
        self.abs_error_estimate = abs_error_estimate
        self.nodes_used = nodes_used


class ConfigError(ValueError):
    """An experiment configuration failed validation."""
