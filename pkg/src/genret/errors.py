"""Exception hierarchy. Every error class name doubles as the CLI's error class."""


class GenRetError(Exception):
    """Base class for all errors raised by the package."""


class VocabularyError(GenRetError):
    pass


class UnknownTokenError(VocabularyError):
    def __init__(self, token: str):
        super().__init__(f"unknown token {token!r}")
        self.token = token


class VocabularyMismatchError(GenRetError):
    pass


class CorpusError(GenRetError):
    pass


class IndexFormatError(GenRetError):
    """Raised for corrupt, truncated or incompatible index files."""


class DecodeError(GenRetError):
    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


class ConfigError(GenRetError):
    pass


class InputFormatError(GenRetError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.path = path
        self.line = line
