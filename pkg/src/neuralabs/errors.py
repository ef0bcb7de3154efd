"""Exception hierarchy shared by all modules."""


class NeuralAbsError(Exception):
    """Base class for every error raised by the toolkit."""


class ExprSyntaxError(NeuralAbsError, SyntaxError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.msg = message
        self.offset = offset

    def __str__(self):
        return f"{self.msg} at offset {self.offset}"


class UnknownVariable(NeuralAbsError, KeyError):
    pass


class UnsupportedFunction(NeuralAbsError, ValueError):
    pass


class DomainError(NeuralAbsError, ArithmeticError):
    """A partial function (sqrt, division) was evaluated outside its domain."""


class DimensionMismatch(NeuralAbsError, ValueError):
    pass


class NonFiniteLoss(NeuralAbsError, FloatingPointError):
    pass


class ModelDomainError(DomainError):
    pass


class ValidationError(NeuralAbsError, ValueError):
    pass


class DegenerateBox(NeuralAbsError, ValueError):
    pass


class NumericalInstability(NeuralAbsError, RuntimeError):
    pass


class ModeExplosion(NeuralAbsError, RuntimeError):
    pass


class BranchExplosion(NeuralAbsError, RuntimeError):
    pass


class OrderOverflow(NeuralAbsError, RuntimeError):
    pass


class SingularSimplex(NeuralAbsError, ValueError):
    pass


class UnsupportedShape(NeuralAbsError, ValueError):
    pass


class IterationLimitExceeded(NeuralAbsError, RuntimeError):
    def __init__(self, failure):
        super().__init__(f"CEGIS iteration limit reached ({failure.iterations} iterations)")
        self.failure = failure


class TimeBudgetExceeded(NeuralAbsError, TimeoutError):
    def __init__(self, failure):
        super().__init__(f"CEGIS time budget exhausted after {failure.elapsed:.1f}s")
        self.failure = failure
