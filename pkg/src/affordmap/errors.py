"""Exception hierarchy for the affordance engine.

Two families drive the CLI exit-code contract: validation errors (bad
arguments, malformed or missing inputs) exit with 2, engine errors
(degenerate data, runtime failures) exit with 1.
"""


class AffordmapError(Exception):
    """Base class for all engine errors.

    ``stage`` is stamped by the fusion pipeline so callers can tell which
    stage an error escaped from.
    """

    stage: str | None = None

    def describe(self) -> str:
        if self.stage:
            return f"[stage {self.stage}] {self}"
        return str(self)


class ValidationError(AffordmapError):
    """Bad arguments or inputs; CLI exit code 2."""


class FormatError(ValidationError):
    """Malformed array file, header, or sidecar content."""


class CorruptError(ValidationError):
    """Payload inconsistent with its declared header (truncation, non-finite data)."""


class MissingInputError(ValidationError):
    """A required file is absent."""


class ShapeMismatchError(ValidationError):
    """Spatial grids or channel counts disagree."""


class ArgumentError(ValidationError):
    """An operation was called outside its contract."""


class EmptyDatasetError(ValidationError):
    """No valid samples under the dataset root."""


class EngineError(AffordmapError):
    """Runtime failure on well-formed inputs; CLI exit code 1."""


class IoError(EngineError):
    """Filesystem write/read failure."""


class EmptyAttentionError(EngineError):
    """Attention map carries no positive mass."""


class DegenerateFeaturesError(EngineError):
    """ROI features have zero variance; PCA is undefined."""


class NoViablePartError(EngineError):
    """Every geometric component was excluded during selection."""


class DegenerateMapError(EngineError):
    """A metric input has no usable mass (zero sum or no fixations)."""


class EvaluationFailedError(EngineError):
    """Every sample in an evaluation run failed."""
