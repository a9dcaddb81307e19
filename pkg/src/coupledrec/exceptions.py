"""Exception types raised across the package."""


class CoupledRecError(Exception):
    """Base class for all package errors."""


class EmptyInput(CoupledRecError, ValueError):
    pass


class MalformedLine(CoupledRecError, ValueError):
    def __init__(self, line_no, reason=""):
        self.line_no = line_no
        msg = f"malformed line {line_no}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class TimestampOutOfGrid(CoupledRecError, ValueError):
    pass


class RatioError(CoupledRecError, ValueError):
    pass


class MissingItem(CoupledRecError, KeyError):
    def __init__(self, raw_id):
        self.raw_id = raw_id
        super().__init__(f"item {raw_id!r} has no feature vector")

    def __str__(self):
        return self.args[0]


class NonFiniteEntry(CoupledRecError, ValueError):
    pass


class HeaderMismatch(CoupledRecError, ValueError):
    pass


class IndexOutOfRange(CoupledRecError, IndexError):
    pass


class FeatureDimMismatch(CoupledRecError, ValueError):
    pass


class VariantMismatch(CoupledRecError, ValueError):
    pass


class NoNegativesAvailable(CoupledRecError, RuntimeError):
    pass


class DivergedError(CoupledRecError, FloatingPointError):
    pass


class EmptyRelevant(CoupledRecError, ValueError):
    pass


class CutoffMismatch(CoupledRecError, ValueError):
    pass


class VocabMismatch(CoupledRecError, ValueError):
    pass


class UnknownUser(CoupledRecError, KeyError):
    def __str__(self):
        return f"unknown user {self.args[0]!r}"


class UnknownInterval(CoupledRecError, KeyError):
    def __str__(self):
        return f"unknown interval {self.args[0]!r}"
