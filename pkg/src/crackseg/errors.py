"""Exception hierarchy shared by the library and the CLI.

The CLI maps these onto its documented exit codes, so raising the right
class matters more than the message text: ConfigError -> 2,
IngestError -> 3 (also evaluation input problems), TrainingError -> 4,
CheckpointError -> 5.
"""


class CrackSegError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 2


class InputError(CrackSegError):
    """An operation rejected its input (shape mismatch, non-finite values, ...)."""

    exit_code = 2


class ConfigError(CrackSegError):
    """Invalid configuration value or configuration file."""

    exit_code = 2


class IngestError(CrackSegError):
    """Corpus or file ingestion failed (missing/invalid images, masks, manifests)."""

    exit_code = 3


class TrainingError(CrackSegError):
    """Training diverged or was otherwise unable to continue."""

    exit_code = 4


class CheckpointError(CrackSegError):
    """Checkpoint file is corrupt or incompatible with the requested use."""

    exit_code = 5


class EvalError(CrackSegError):
    """Evaluation is undefined for the given inputs (e.g. single-class truth)."""

    exit_code = 3
