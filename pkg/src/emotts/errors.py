"""Exception hierarchy shared across the package."""


class EmoTtsError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(EmoTtsError):
    """Operand shapes do not conform to an operation's shape rule."""


class ConfigError(EmoTtsError):
    """Invalid or inconsistent configuration values."""


class ContractError(EmoTtsError):
    """An operation was called outside its documented contract."""


class NumericError(EmoTtsError):
    """NaN/Inf or another numeric breakdown was detected."""


class VocabError(EmoTtsError):
    """A character is not present in the configured vocabulary."""


class LabelError(EmoTtsError):
    """Unknown emotion label."""


class FormatError(EmoTtsError):
    """Malformed external file (wav, manifest, cache, checkpoint)."""


class EmptyAudioError(EmoTtsError):
    """Audio contains no frames above the silence threshold."""


class CheckpointError(FormatError):
    """Checkpoint file failed validation."""


class UsageError(EmoTtsError):
    """Bad command-line invocation."""
