"""Exception hierarchy shared by all prunekit modules"""

from typing import Optional


class PrunekitError(Exception):
    """Base class for all prunekit errors"""


class ValidationError(PrunekitError, ValueError):
    """An invariant or precondition does not hold"""

    def __init__(self, message: str, location: Optional[str] = None):
        self.location = location
        if location:
            message = f"{message} ({location})"
        super().__init__(message)


class FormatError(ValidationError):
    """Malformed file content"""

    def __init__(self, path: str, message: str, location: Optional[str] = None):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}", location)


class NonFiniteError(ValidationError):
    """Non-finite loss or activation during training"""


class PrunekitIOError(PrunekitError, OSError):
    """I/O failure, including refusing to overwrite an existing output"""
