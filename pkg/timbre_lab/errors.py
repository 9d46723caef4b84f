"""
Error taxonomy shared by every component.

Validation failures subclass ValueError so callers can keep the plain
``except ValueError`` handling used at the process boundary.
"""


class InvalidArgumentError(ValueError):
    """An operation was called with arguments outside its contract."""


class ConfigError(ValueError):
    """A config file or override is malformed; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class ArtifactFormatError(ValueError):
    """A binary artifact has a bad magic, truncated body or inconsistent header."""


class MissingPrerequisiteError(FileNotFoundError):
    """A pipeline step needs an artifact that has not been produced yet."""

    def __init__(self, artifact, hint=""):
        message = f"Missing prerequisite artifact: {artifact}"
        if hint:
            message = f"{message} ({hint})"
        super().__init__(message)
        self.artifact = str(artifact)


class BudgetExhaustedError(RuntimeError):
    """The black-box oracle refused a query because its budget is spent."""
