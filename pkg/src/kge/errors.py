"""Exception hierarchy.

``UserError`` subclasses describe problems the caller can fix (bad dataset,
bad configuration, unknown model name). Everything else is an internal
failure. The CLI maps the two groups onto different exit codes.
"""


class KgeError(Exception):
    """Base class for all errors raised by this package."""

    hint = ""


class UserError(KgeError):
    pass


class DatasetError(UserError):
    hint = "check the dataset directory and the TAB-separated line format"


class CacheError(DatasetError):
    hint = "delete the .kgcache directory to force a re-parse"


class ConfigError(UserError):
    hint = "run `kge <command> -h` for the accepted keys and ranges"

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class UnknownModelError(ConfigError):
    def __init__(self, name, registered):
        self.registered = list(registered)
        ConfigError.__init__(
            self, "model",
            f"unknown model {name!r}; registered kinds: {', '.join(self.registered)}",
        )


class CheckpointError(UserError):
    hint = "re-run `kge train` to produce a fresh model.bin"


class NonFiniteLossError(KgeError):
    """Training diverged.

    Carries the epoch, the batch index and the ids of parameter rows that
    hold non-finite values so the failure can be traced.
    """

    hint = "lower --learning-rate or switch --opt"

    def __init__(self, epoch, batch_index, rows):
        self.epoch = epoch
        self.batch_index = batch_index
        self.rows = rows
        shown = {k: v[:10].tolist() for k, v in rows.items() if len(v)}
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch_index}; offending rows: {shown}"
        )


class NoResultError(KgeError):
    hint = "inspect the trials log; every trial failed"
