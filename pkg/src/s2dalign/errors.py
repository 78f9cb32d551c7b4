"""Exception types shared across the package.

The CLI maps these onto its exit-code contract; everything else raises them
directly.
"""


class S2DAlignError(Exception):
    """Base class for all package errors."""


class ConfigError(S2DAlignError):
    """Invalid, out-of-bounds, or unknown configuration. CLI exit code 2."""


class CorpusError(S2DAlignError):
    """Missing or malformed corpus data. CLI exit code 3."""


class StudyNotFoundError(CorpusError):
    """A study id did not resolve inside the corpus. CLI exit code 5."""


class CheckpointError(S2DAlignError):
    """Unreadable or inconsistent checkpoint container. CLI exit code 4."""


class MetricsError(S2DAlignError):
    """No metric rows available where some were required. CLI exit code 6."""


class GrammarError(S2DAlignError):
    """Token or entity outside the closed grammar catalog."""


class SelectionError(S2DAlignError):
    """Reference-report selection is impossible (single-study patient)."""


class PromptPoolError(S2DAlignError):
    """Demonstration pool too small for the requested sample size."""


class VocabError(S2DAlignError):
    """Token id outside the vocabulary."""


class ShapeError(S2DAlignError):
    """Tensor dimensions violate an operation's contract."""


class EmptyContextError(S2DAlignError):
    """Cross-attention received zero key rows."""


class ContextError(S2DAlignError):
    """Context branches do not match the requested stage."""


class AsymmetryError(S2DAlignError):
    """Generation was asked to condition on auxiliary (non-vision) context."""


class RegistryError(S2DAlignError):
    """Unknown connector name."""


class TrainingError(S2DAlignError):
    """Training aborted (non-finite loss); carries a diagnostic payload."""


class UsageError(S2DAlignError):
    """API misuse, such as mismatched list lengths."""
