"""Exception hierarchy shared by every module."""


class CollabVarError(Exception):
    """Base class for all package errors."""


class InvalidLagError(CollabVarError, ValueError):
    pass


class StationarityError(CollabVarError, ValueError):
    pass


class ShapeError(CollabVarError, ValueError):
    pass


class RankDeficiencyError(CollabVarError, ValueError):
    pass


class InsufficientHistoryError(CollabVarError, ValueError):
    pass


class CalibrationError(CollabVarError, ValueError):
    """Raised when a privacy calibration cannot be satisfied."""


class ProtocolAbort(CollabVarError, RuntimeError):
    """A secure protocol detected inconsistent inputs and stopped."""


class InvalidRegimeError(CollabVarError, ValueError):
    """Breach formula evaluated outside the regime T > n*p."""


class IngestionError(CollabVarError, ValueError):
    pass


class ConfigError(CollabVarError, ValueError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
