"""Exception types shared across the lab."""


class MkdvLabError(Exception):
    pass


class NonConvergence(MkdvLabError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class QuadratureNotConverged(MkdvLabError):
    def __init__(self, msg, values=None):
        super().__init__(msg)
        # last two refinement values
        self.values = values


class WindowTooSmall(MkdvLabError):
    pass


class TruncationDominates(MkdvLabError):
    def __init__(self, msg, tail=None, value=None):
        super().__init__(msg)
        self.tail = tail
        self.value = value


class InsufficientLadder(MkdvLabError):
    pass


class AliasingDetected(MkdvLabError):
    def __init__(self, msg, fraction=None):
        super().__init__(msg)
        self.fraction = fraction


class StepRejected(MkdvLabError):
    pass


class NoContraction(MkdvLabError):
    def __init__(self, msg, factors=None):
        super().__init__(msg)
        self.factors = factors


class ConfigInvalid(MkdvLabError):
    def __init__(self, msg, path=None, violations=None):
        super().__init__(msg)
        self.path = path
        self.violations = violations or []


class ModuleError(MkdvLabError):
    pass
