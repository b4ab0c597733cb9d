"""Exception hierarchy shared across the package."""


class IsicapError(Exception):
    """Base class for all errors raised by this package."""


class AllMassZero(IsicapError):
    """Every candidate carries zero probability; nothing to normalize."""


class ParseError(IsicapError):
    """A world, QA table, issue, or config file failed to parse."""


class SchemaViolation(IsicapError):
    """An image assigns a value outside its attribute's allowed set."""


class UnknownToken(IsicapError):
    """A token is not part of the lexicon or backend vocabulary."""


class UnknownAttribute(IsicapError):
    """An attribute name is not declared in the schema."""


class UnknownQuestion(IsicapError):
    """A question has no rows in the QA table (exact string match)."""


class ImageNotInIssue(IsicapError):
    """An image id lies outside the domain of an issue's partition."""


class EmptyCell(IsicapError):
    """A cell that must be non-empty is empty."""


class ProtocolError(IsicapError):
    """The remote speaker sent a malformed or out-of-tolerance message."""


class VocabMismatch(ProtocolError):
    """A served distribution does not align with the handshake vocabulary."""


class Timeout(IsicapError):
    """The remote speaker did not answer in time."""


class EnumerationTooLarge(IsicapError):
    """The exact caption space exceeds the configured enumeration cap."""


class UnknownIssueMapping(IsicapError):
    """An issue has no (part, aspect) mapping known to the classifier."""
