"""Exception hierarchy shared by every invarlab module."""


class InvarlabError(Exception):
    """Base class; the CLI maps subclasses to exit codes via ``exit_code``."""

    exit_code = 1


class ConfigError(InvarlabError):
    """Malformed run configuration. ``key`` points at the offending entry."""

    exit_code = 2

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class ParseError(InvarlabError):
    exit_code = 3

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BoundsError(InvarlabError):
    exit_code = 4


class SingularTransform(InvarlabError):
    exit_code = 4


class GeometryError(InvarlabError):
    exit_code = 4


class ShapeError(InvarlabError):
    exit_code = 4


class NumericError(InvarlabError):
    exit_code = 4


class CapabilityError(InvarlabError):
    exit_code = 5


class MissingEmbedding(InvarlabError, KeyError):
    exit_code = 3

    def __init__(self, sample_id):
        super().__init__(f"no stored embedding for id {sample_id!r}")
        self.sample_id = sample_id

    def __str__(self):
        return self.args[0]


class DuplicateId(ParseError):
    pass


class DegenerateEmbedding(InvarlabError):
    exit_code = 4

    def __init__(self, sample_id):
        super().__init__(f"embedding of sample {sample_id!r} has zero norm")
        self.sample_id = sample_id


class DegenerateBaseline(InvarlabError):
    exit_code = 4


class IncompleteGrid(InvarlabError):
    exit_code = 4

    def __init__(self, gaps):
        gaps = list(gaps)
        shown = ", ".join(map(str, gaps[:8])) + (" ..." if len(gaps) > 8 else "")
        super().__init__(f"{len(gaps)} missing cell(s): {shown}" if gaps else "empty result grid")
        self.gaps = gaps


class CatalogMismatch(InvarlabError):
    exit_code = 4


class EmptyUnion(InvarlabError):
    exit_code = 4


class UnknownClass(InvarlabError, KeyError):
    exit_code = 3

    def __str__(self):
        return self.args[0]


class TrainingDiverged(InvarlabError):
    """Raised when the training loss turns non-finite; carries a snapshot."""

    exit_code = 4

    def __init__(self, message, snapshot):
        super().__init__(message)
        self.snapshot = snapshot
