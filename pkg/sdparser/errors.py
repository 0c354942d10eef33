"""
Exception hierarchy shared by every module.

Library code raises these; only the command-line layer turns them into exit codes.
"""
from typing import Optional


class SDParserError(Exception):
    """Base class for all toolkit errors"""
    exit_code = 1


class ConfigError(SDParserError, ValueError):
    """Bad flags, incompatible settings or missing resources"""
    exit_code = 2


class DataError(SDParserError, ValueError):
    """Malformed corpora, invalid trees, unusable model files"""
    exit_code = 3


class FormatError(DataError):
    """A line of an input file could not be parsed"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class TreeError(DataError):
    pass


class FeatureError(DataError):
    pass


class TransitionError(DataError):
    pass


class OracleError(DataError):
    pass


class ModelError(DataError):
    pass


class ModelVersionError(ModelError):
    pass


class TruncatedModelError(ModelError):
    pass
