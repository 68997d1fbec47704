"""Exception types mapped to CLI exit codes."""


class LexcourtError(Exception):
    """Base class for engine errors."""


class ValidationError(LexcourtError):
    """Bad run configuration or parameters. CLI exit code 2."""


class ServiceError(LexcourtError):
    """External embedding/LLM service failure after retries. CLI exit code 3."""


class DataFormatError(LexcourtError):
    """Malformed input file. CLI exit code 4."""
