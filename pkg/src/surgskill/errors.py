"""Exception hierarchy shared across the package."""


class SkillError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(SkillError):
    """A layer, architecture or run configuration is inconsistent."""

    exit_code = 2


class InputError(SkillError):
    """User-supplied data or arguments are unusable."""

    exit_code = 2


class ParseError(InputError):
    """A kinematics file or manifest could not be parsed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class InternalStateError(SkillError):
    """A cache, memo or optimizer state does not match what an operation expects."""

    exit_code = 2


class DivergenceError(SkillError):
    """Training produced a non-finite loss."""

    exit_code = 3

    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
