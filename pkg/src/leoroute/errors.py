"""Exception hierarchy shared across the simulator."""


class LeoRouteError(Exception):
    pass


class ConfigError(LeoRouteError, ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DomainError(LeoRouteError, ValueError):
    pass


class CoverageGapError(LeoRouteError):
    def __init__(self, gateway_id, time):
        self.gateway_id = gateway_id
        self.time = time
        super().__init__(f"no visible satellite for gateway {gateway_id!r} at t={time:.3f}s")


class ConsistencyError(LeoRouteError, RuntimeError):
    """Internal invariant violated; the run must abort."""


class DivergenceError(LeoRouteError, RuntimeError):
    pass


class DeadEndError(LeoRouteError):
    pass
