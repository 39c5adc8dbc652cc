"""Exception hierarchy shared across the package."""


class PimuError(Exception):
    """Base class for all pseudo-IMU pipeline errors."""


class IncompleteFrame(PimuError):
    pass


class IncompleteTorso(IncompleteFrame):
    pass


class DegenerateTorso(PimuError):
    pass


class CoincidentMidpoint(DegenerateTorso):
    pass


class NonOrthonormalFrame(PimuError):
    pass


class TooShort(PimuError):
    pass


class NonPositiveDt(PimuError):
    pass


class NonUniformSampling(PimuError):
    pass


class WindowRejected(PimuError):
    """A window failed a quality gate (e.g. too many gimbal-flagged frames)."""


class DegenerateDataset(PimuError):
    pass


class ShapeMismatch(PimuError):
    pass


class LayoutMismatch(ShapeMismatch):
    pass


class VersionMismatch(PimuError):
    pass


class CorruptFile(PimuError):
    pass


class ParseError(PimuError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NonMonotoneTimestamps(PimuError):
    pass
