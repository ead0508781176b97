class PercolabError(Exception):
    """Base class for all errors raised by percolab."""


class InvalidInputError(PercolabError, ValueError):
    pass


class ResourceLimitError(PercolabError):
    pass


class ConfigError(PercolabError):
    """Raised by the config parser; carries every problem found, not just the first."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))
