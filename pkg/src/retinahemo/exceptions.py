"""Exception hierarchy shared by all pipeline stages."""


class RetinaHemoError(Exception):
    """Base class for every error raised by this package."""


class EmptyInput(RetinaHemoError, ValueError):
    pass


class InvalidCenterline(RetinaHemoError, ValueError):
    pass


class NoArterialTree(RetinaHemoError):
    pass


class RootMismatch(RetinaHemoError, ValueError):
    pass


class InvalidRadius(RetinaHemoError, ValueError):
    pass


class NoOutlets(RetinaHemoError, ValueError):
    pass


class SolveFailure(RetinaHemoError, RuntimeError):
    pass


class IncompleteSolution(RetinaHemoError, ValueError):
    pass


class InsufficientData(RetinaHemoError, ValueError):
    pass


class InvalidRegularization(RetinaHemoError, ValueError):
    pass


class FoldError(RetinaHemoError):
    pass


class UndefinedCorrelation(RetinaHemoError, ValueError):
    pass


class EmptyGroup(RetinaHemoError, ValueError):
    pass


class DepthTooLarge(RetinaHemoError, ValueError):
    pass


class InvalidField(RetinaHemoError, ValueError):
    pass
