"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class ImpossibleEventError(ValueError):
    """The model assigns zero intensity to an observed event.

    Attributes
    ----------
    index : int
        Position of the offending event within its sequence.
    seq_id : str or None
        Identifier of the sequence, when known.
    """

    def __init__(self, index, seq_id=None, message=None):
        self.index = int(index)
        self.seq_id = seq_id
        if message is None:
            where = f" of sequence {seq_id!r}" if seq_id is not None else ""
            message = f"zero intensity at event {self.index}{where}"
        super().__init__(message)


class StationarityError(ValueError):
    """Hawkes parameters whose branching matrix has spectral radius >= 1."""


class DataFormatError(ValueError):
    """Malformed or invalid data file contents."""


class FormatVersionError(DataFormatError):
    """A file was written by an unsupported (newer) format version."""


class DescentFailure(AssertionError):
    """A projected-gradient step failed to decrease a convex objective.

    This signals an inconsistent gradient rather than a data problem.
    """
