"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A numeric parameter is out of range or otherwise invalid."""


class LocationError(ValueError):
    """A point location does not refer to a valid position in a tree."""


class FileFormatError(ValueError):
    """An input file (tree edge list, sequence file, config) is malformed.

    Carries an optional 1-based row number for diagnostics.
    """

    def __init__(self, message: str, row: int | None = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row
