"""Exception hierarchy shared by every stfn module."""


class StfnError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(StfnError, ValueError):
    def __init__(self, message, *shapes):
        self.shapes = tuple(tuple(s) for s in shapes)
        if shapes:
            message = f"{message}: " + " vs ".join(str(s) for s in self.shapes)
        super().__init__(message)


class ConfigError(StfnError, ValueError):
    pass


class ContextError(StfnError, RuntimeError):
    """backward() called without a matching forward()."""


class FormatError(StfnError):
    """Base for on-disk format problems."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class NonFiniteError(FormatError):
    pass


class CheckpointError(FormatError):
    pass


class ManifestError(FormatError):
    pass
