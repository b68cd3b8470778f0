"""Exception types raised by the engine.

Every module raises subclasses of :class:`WalksegError`; the CLI maps them
to exit code 1 and prints the class name, so each class here is part of the
user-facing contract.
"""


class WalksegError(Exception):
    """Base class for all engine errors."""


class ZeroNormRow(WalksegError):
    """A query/key row has (near-)zero norm, so cosine similarity is undefined."""


class GridMismatch(WalksegError):
    """Grid dimensions do not multiply out to the number of nodes."""


class DegenerateRow(WalksegError):
    """An affinity row sums to (near-)zero and cannot be normalized."""


class DimensionMismatch(WalksegError):
    """Operands disagree on node, class, or feature dimensions."""


class MixedRepresentation(WalksegError):
    """Head fusion received a mixture of incompatible representations."""


class NotAProbability(WalksegError):
    """Rows are not valid probability distributions."""


class SingularSystem(WalksegError):
    """The linear system of an exact walk is numerically singular."""


class NonFiniteIterate(WalksegError):
    """A walk iterate contains NaN or Inf."""


class BadMagic(WalksegError):
    """File does not start with the NRVF magic bytes."""


class VersionUnsupported(WalksegError):
    """NRVF version is newer than this reader understands."""


class CorruptPayload(WalksegError):
    """File payload is truncated, malformed, or fails its checksum."""


class InconsistentHeader(WalksegError):
    """Header fields are implausible or mutually inconsistent."""


class IoFailure(WalksegError):
    """Filesystem error while reading or writing artifacts."""
