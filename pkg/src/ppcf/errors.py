"""Exception types shared across the package."""


class PPCFError(Exception):
    pass


class InvalidInput(PPCFError, ValueError):
    pass


class DegenerateInput(PPCFError, ValueError):
    pass


class DictionaryBuildFailure(PPCFError, RuntimeError):
    pass


class CorruptDictionary(PPCFError, ValueError):
    pass


class MalformedReport(PPCFError, ValueError):
    pass


class AlreadyReported(PPCFError):
    """Raised when a client submits a value it has already reported."""

    def __init__(self, key):
        super().__init__(f"value already reported: {key!r}")
        self.key = key
