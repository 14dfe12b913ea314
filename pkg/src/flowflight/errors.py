class FlowFlightError(Exception):
    pass


class ConfigError(FlowFlightError, ValueError):
    """Invalid configuration value; ``key`` is the dotted path of the offender."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class InvalidActionError(FlowFlightError, ValueError):
    pass


class OutOfFOVError(FlowFlightError, ValueError):
    pass


class NonFiniteError(FlowFlightError, FloatingPointError):
    pass
