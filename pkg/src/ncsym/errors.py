"""Exception hierarchy shared by all ncsym modules."""


class NcsymError(Exception):
    """Base class for every error raised by this package."""


class IntegrationDiverged(NcsymError):
    pass


class SignalExhausted(NcsymError):
    pass


class UnsupportedDomain(NcsymError):
    pass


class InvalidValue(NcsymError, ValueError):
    pass


class EmptyGrid(NcsymError):
    pass


class InvalidParameter(NcsymError, ValueError):
    pass


class UnsupportedCertificate(NcsymError):
    pass


class StateBudgetExceeded(NcsymError):
    """Abstraction construction hit its state cap.

    ``stats`` holds whatever was counted before the abort.
    """

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = dict(stats or {})


class SpecTooLarge(NcsymError):
    pass


class CapExceeded(NcsymError):
    pass


class InfeasibleScenario(NcsymError):
    pass


class RuntimeDomainMiss(NcsymError):
    pass


class ConfigError(NcsymError):
    pass
