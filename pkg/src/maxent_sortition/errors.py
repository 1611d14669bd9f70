"""Exception hierarchy shared by every module of the package."""


class SortitionError(Exception):
    """Base class for all errors raised by this package."""


class InstanceError(SortitionError, ValueError):
    """Malformed or invalid instance data.

    ``location`` points at the offending line/field when it is known.
    """

    def __init__(self, message, location=None):
        self.location = location
        if location is not None:
            message = f"{location}: {message}"
        super().__init__(message)


class InfeasibleError(SortitionError):
    """No panel satisfies the quotas of the enforced feature subset."""

    def __init__(self, message, features=()):
        self.features = tuple(features)
        super().__init__(message)


class MemoryBudgetExceeded(SortitionError, MemoryError):
    """The counting table would exceed the configured memory budget."""

    def __init__(self, layer, live_states, estimated_bytes, budget):
        self.layer = layer
        self.live_states = live_states
        self.estimated_bytes = estimated_bytes
        self.budget = budget
        super().__init__(
            f"layer {layer}: {live_states} live states "
            f"(~{estimated_bytes} bytes) exceed budget of {budget} bytes"
        )


class SamplingTimeout(SortitionError, TimeoutError):
    """Rejection sampling or optimization ran out of attempts or time."""

    def __init__(self, message, attempts=0, accepted=0):
        self.attempts = attempts
        self.accepted = accepted
        super().__init__(message)

    @property
    def acceptance_rate(self):
        return self.accepted / self.attempts if self.attempts else 0.0


class OracleGuardError(SortitionError):
    """Brute-force enumeration refused because the instance is too large."""
