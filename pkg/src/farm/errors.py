"""Exception types raised across the package."""


class FarmError(Exception):
    """Base class for all package errors."""


class RankDeficient(FarmError):
    def __init__(self, rank, requested):
        self.rank = rank
        self.requested = requested
        super().__init__(
            f"requested {requested} factors but X has numerical rank {rank}"
        )


class DegenerateSpectrum(FarmError):
    pass


class NonConvergence(FarmError):
    def __init__(self, message, gap):
        self.gap = gap
        super().__init__(f"{message} (final optimality gap {gap:.3e})")


class InsufficientData(FarmError):
    pass


class DegenerateColumn(FarmError):
    def __init__(self, column, detail=""):
        self.column = column
        msg = f"column {column} is degenerate"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class SupportTooLarge(FarmError):
    pass


class ExponentTooLarge(FarmError):
    pass


class WindowTooSmall(FarmError):
    pass


class DataFormatError(FarmError):
    """Malformed input file; message carries the line/column location."""
