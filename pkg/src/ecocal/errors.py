"""Error taxonomy for the calibration engine.

Every failure mode callers are expected to handle has its own class so tests
and the remote protocol can map them without string matching.
"""


class EcocalError(Exception):
    """Base class for all engine errors."""


# kernel
class DuplicateClassCode(EcocalError):
    pass


class InvalidSpec(EcocalError):
    pass


class UnknownClass(EcocalError):
    pass


class UnknownVariable(EcocalError):
    pass


class UnknownParameter(EcocalError):
    pass


class OutOfRange(EcocalError):
    pass


class EmptyModel(EcocalError):
    pass


class NumericalDivergence(EcocalError):
    """A run produced a non-finite value; carries the offending location."""

    def __init__(self, class_name: str, variable: str, step: int):
        self.class_name = class_name
        self.variable = variable
        self.step = step
        super().__init__(f"non-finite value in {class_name}.{variable} at step {step}")


# knowledge / sensitivity persistence
class StorageFailure(EcocalError):
    pass


class MalformedKnowledgeFile(EcocalError):
    pass


class MissingRelationships(EcocalError):
    pass


class TrajectoryTooShort(EcocalError):
    pass


# fitness
class NoObservations(EcocalError):
    pass


class EmptyTrajectory(EcocalError):
    pass


# calibrator
class InconsistentKnowledge(EcocalError):
    pass


class MissingKnowledge(EcocalError):
    pass


# model database / files
class MalformedModelFile(EcocalError):
    pass


class UnknownBehavior(EcocalError):
    pass


class MalformedObservationFile(EcocalError):
    pass


# remote control
class BindFailure(EcocalError):
    pass


class ControlHeld(EcocalError):
    """A remote controller holds the model; local mutation is rejected."""
