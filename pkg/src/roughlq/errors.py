"""Exception hierarchy shared by all modules."""


class RoughLQError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(RoughLQError, ValueError):
    pass


class ParameterError(RoughLQError, ValueError):
    pass


class NodeIndexError(RoughLQError, IndexError):
    pass


class TimeRangeError(RoughLQError, ValueError):
    pass


class NumericalBlowupError(RoughLQError, FloatingPointError):
    """A scheme step produced a non-finite state."""

    def __init__(self, interval: int, message: str | None = None):
        self.interval = interval
        super().__init__(message or f"non-finite state after interval {interval}")


class InversionConsistencyError(RoughLQError):
    """A^{-1} A drifted away from the identity."""

    def __init__(self, defect: float, node: int, tolerance: float):
        self.defect = defect
        self.node = node
        self.tolerance = tolerance
        super().__init__(
            f"product defect {defect:.3e} at node {node} exceeds tolerance {tolerance:.1e}"
        )


class RiccatiSingularityError(RoughLQError):
    def __init__(self, time: float, denom: float):
        self.time = time
        self.denom = denom
        super().__init__(f"Riccati denominator {denom:.3e} below floor at t={time:.6g}")


class PositivityViolationError(RoughLQError):
    def __init__(self, time: float, value: float):
        self.time = time
        self.value = value
        super().__init__(f"Riccati solution P={value:.3e} negative at t={time:.6g}")


class ScopeError(RoughLQError, ValueError):
    """Problem data outside the closed-form LQ scope."""


class EnsembleFailureError(RoughLQError):
    pass


class ConfigError(RoughLQError, ValueError):
    pass
