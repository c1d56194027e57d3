class SpherecritsError(Exception):
    pass


class DomainError(SpherecritsError, ValueError):
    pass


class SingularArgumentError(DomainError):
    pass


class DegenerateGeometryError(SpherecritsError):
    pass


class NotPSDError(SpherecritsError, ValueError):
    pass


class PoleProximityError(DomainError):
    pass


class IntegrityError(SpherecritsError):
    """Critical-point bookkeeping violates Morse/Euler relations."""


class ConvergenceError(SpherecritsError):
    pass


class BudgetExceededError(SpherecritsError):
    pass
