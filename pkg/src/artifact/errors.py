"""Exception hierarchy shared by all modules."""


class ArtifactError(Exception):
    """Base class for computation errors raised by this package."""


class ParseError(ArtifactError):
    pass


class EmptyDataset(ArtifactError):
    pass


class NonFiniteValue(ArtifactError):
    pass


class DuplicateTime(ArtifactError):
    pass


class DegenerateRange(ArtifactError):
    pass


class InsufficientPoints(ArtifactError):
    pass


class AllPredictionsUndefined(ArtifactError):
    pass


class InvalidWarp(ArtifactError):
    pass


class ZeroTimeMass(ArtifactError):
    pass


class NoAdmissibleCandidate(ArtifactError):
    pass


class EmptyFirstDataset(ArtifactError):
    pass


class AllPointsThin(ArtifactError):
    pass


class ReplicateFailure(ArtifactError):
    pass


class DensityZero(ArtifactError):
    pass


class InvalidSawtooth(ArtifactError):
    pass
