"""Exception taxonomy for the extractor CLI.

Two tiers mirror the engine's convention: ``UsageError`` subclasses map to
exit code 2 (the invocation itself is wrong), everything else under
``ExtractError`` maps to exit code 1 (the run failed).
"""

from __future__ import annotations


class ExtractError(Exception):
    """Base class for all extractor failures."""


class UsageError(ExtractError):
    """Invalid configuration, arguments, or input listings. Exit code 2."""


class ConfigError(UsageError):
    """ExtractionConfig invariant violated (layers, timesteps, sizes)."""


class PromptError(UsageError):
    """Template cannot render a prompt meeting the exactly-once invariant."""


class InputError(UsageError):
    """Image list CSV missing, malformed, or empty."""


class ManifestMismatchError(UsageError):
    """Output tree was produced under a different config hash; needs --force."""


class ModelSetupError(ExtractError):
    """A model-backed backend is unavailable (missing package or weights)."""


class TokenAlignmentError(ExtractError):
    """Verb or object span could not be located in the tokenized prompt.

    Carries the token dump so the failure is diagnosable from the message.
    """

    def __init__(self, phrase: str, tokens: list[str]):
        self.phrase = phrase
        self.tokens = list(tokens)
        super().__init__(f"no token span for {phrase!r}; prompt tokens: {self.tokens}")


class ExtractionFailedError(ExtractError):
    """A single-sample extraction could not produce a valid bundle."""
