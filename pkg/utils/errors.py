"""
Exception types raised across the trajectory synthesis pipeline.
"""


class TrajectorySynthError(Exception):
    """Base class for every error raised by this package"""


class ConfigError(TrajectorySynthError, ValueError):
    pass


# polysnap

class ZeroLengthSegment(TrajectorySynthError, ValueError):
    def __init__(self, index, distance):
        self.index = index
        self.distance = distance
        super().__init__(
            f"Waypoints {index} and {index + 1} coincide (distance {distance:.3e} m)"
        )


class InsufficientOrder(TrajectorySynthError, ValueError):
    pass


class SingularKkt(TrajectorySynthError, RuntimeError):
    def __init__(self, condition):
        self.condition = condition
        super().__init__(f"KKT matrix is numerically singular (condition estimate {condition:.3e})")


class OutOfDomain(TrajectorySynthError, ValueError):
    pass


# camera

class BehindCamera(TrajectorySynthError, ValueError):
    def __init__(self, depth):
        self.depth = depth
        super().__init__(f"Point lies behind the camera (depth {depth:.3e} m)")


class InvalidRange(TrajectorySynthError, ValueError):
    pass


# datagen

class RejectionBudgetExceeded(TrajectorySynthError, RuntimeError):
    pass


class Rejected(TrajectorySynthError):
    """A generated track failed a sanity check; the caller resamples"""

    def __init__(self, reason, detail=""):
        self.reason = reason
        self.detail = detail
        message = f"Track rejected: {reason.value}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


# baselines

class NonFiniteInput(TrajectorySynthError, ValueError):
    pass


class TooFewObservations(TrajectorySynthError, ValueError):
    pass


# seqmodel

class NonFiniteActivation(TrajectorySynthError, RuntimeError):
    pass


class DivergedTraining(TrajectorySynthError, RuntimeError):
    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"Training diverged at epoch {epoch} (loss {loss})")


class HorizonTooLarge(TrajectorySynthError, ValueError):
    pass


# harness

class SchemaError(TrajectorySynthError, ValueError):
    """Annotation file does not match the expected layout"""

    def __init__(self, path, message, line=None, field=None):
        self.path = str(path)
        self.line = line
        self.field = field
        location = self.path
        if line is not None:
            location += f":{line}"
        if field is not None:
            location += f" [{field}]"
        super().__init__(f"{location}: {message}")


class EmptyEvaluation(TrajectorySynthError, ValueError):
    pass
