"""Exception types shared across the package."""


class SiposeError(Exception):
    pass


class ShapeError(SiposeError, ValueError):
    pass


class DomainError(SiposeError, ValueError):
    pass


class DegenerateRotation(SiposeError, ValueError):
    pass


class DegenerateDisparity(SiposeError, ValueError):
    pass


class BehindCamera(SiposeError, ValueError):
    pass


class EmptyCloud(SiposeError, ValueError):
    pass


class FitDiverged(SiposeError, RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class BadImuFrame(SiposeError, ValueError):
    pass


class ConfigError(SiposeError, ValueError):
    pass


class StageOrderError(SiposeError, RuntimeError):
    pass


class TemplateMismatch(SiposeError, ValueError):
    pass
