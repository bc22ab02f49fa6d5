"""Exception hierarchy shared across the package.

Three broad families map onto CLI exit codes: domain errors (bad data or
bad requests, exit 2), provider errors (network or refusals, exit 3) and
storage errors (exit 4).
"""


class BranchForgeError(Exception):
    """Base class for all package errors."""


# --- domain errors -------------------------------------------------------

class DomainError(BranchForgeError):
    """Invalid data or an operation misuse detected by this package."""


class ValidationFailed(DomainError):
    """A validator returned violations where a valid object was required."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class MissingArgument(DomainError):
    """A kind-specific prompt argument was not supplied."""


class TypeMismatch(DomainError):
    """A subject of the wrong type was passed for the requested prompt kind."""


class TemplateError(DomainError):
    """A template file is missing or contains an unknown placeholder."""


class NoObjectFound(DomainError):
    """No fenced code block or brace-delimited object in the model output."""


class ParseError(DomainError):
    """The located object span is not valid JSON."""

    def __init__(self, message, position):
        self.position = position
        super().__init__(f"{message} (at position {position})")


class SchemaViolation(DomainError):
    """Parsed output does not conform to the expected schema."""

    def __init__(self, field, rule):
        self.field = field
        self.rule = rule
        super().__init__(f"{field}: {rule}")


class PinnedPrefixOverflow(DomainError):
    """The pinned history prefix alone exceeds the truncation target."""


class LatestUserMessageOverflow(DomainError):
    """Pinned prefix plus the latest user message exceeds the target."""


class UnknownStory(DomainError):
    """No story with the given id in the store."""


class UnknownNode(DomainError):
    """An edge endpoint references a node that is not persisted."""


class DuplicateEdge(DomainError):
    """The edge already exists."""


class ChoiceOnNonChoiceSource(DomainError):
    """choice_index supplied for an edge whose source bears no choices."""


class InvalidChoiceAt(DomainError):
    """A choice sequence stepped outside the available choices."""

    def __init__(self, step, detail=""):
        self.step = step
        msg = f"invalid choice at step {step}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class VersionUnsupported(DomainError):
    """The export document declares a format version we cannot read."""


class EmptyGame(DomainError):
    """Evaluation requested for a story with no chunks."""


class JudgeMalformed(DomainError):
    """The judge response yielded no usable in-range score."""


class LexiconOverlap(DomainError):
    """Positive and negative lexicon sets share words."""


class UndecodableImage(DomainError):
    """Image bytes could not be decoded."""


# --- provider errors -----------------------------------------------------

class ProviderError(BranchForgeError):
    """Base for chat/image provider failures."""


class TransportError(ProviderError):
    """Network-level failure talking to a provider."""


class ProviderRefusal(ProviderError):
    """The provider answered with a non-success status."""

    def __init__(self, status, message=""):
        self.status = status
        self.retryable = status == 429 or 500 <= status < 600
        super().__init__(f"provider returned {status}: {message}" if message
                         else f"provider returned {status}")


class RetriesExhausted(ProviderError):
    """All generation attempts failed; carries the full retry report."""

    def __init__(self, report):
        self.report = report
        super().__init__(
            f"no valid output after {len(report.attempts)} attempts"
        )


# --- storage errors ------------------------------------------------------

class StorageFailure(BranchForgeError):
    """The graph store could not complete a durable operation."""
