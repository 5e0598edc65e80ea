"""Exception types shared across the package."""


class DataError(ValueError):
    """Input data is malformed or violates a precondition."""


class ParseError(DataError):
    """A line of a text input could not be parsed."""

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class SamplingError(DataError):
    """Triplet or edge sampling could not satisfy its constraints."""


class TrainingError(RuntimeError):
    """Training diverged or could not proceed."""
