"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line layer can map it
without a lookup table: 2 for model/document problems, 3 for numerical
failures, 4 for failed invariants.
"""

from __future__ import annotations


class DecompartError(Exception):
    exit_code = 3


class ModelError(DecompartError):
    exit_code = 2


class NumericalError(DecompartError):
    exit_code = 3


class InvariantFailure(DecompartError):
    exit_code = 4


# expression language


class ExprSyntaxError(ModelError):
    def __init__(self, message: str, offset: int, source: str = ""):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset
        self.source = source


class UnknownIdentifier(ModelError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at byte {offset}")
        self.name = name
        self.offset = offset


class EvalError(NumericalError):
    pass


# model / document


class SchemaError(ModelError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class UnknownLabel(ModelError):
    pass


class PathSyntaxError(ModelError):
    pass


# numerics


class NegativeFlow(NumericalError):
    def __init__(self, kind: str, index: tuple[int, ...], value: float, t: float | None = None):
        where = ",".join(str(i) for i in index)
        at = "" if t is None else f" at t={t!r}"
        super().__init__(f"negative {kind}[{where}] = {value!r}{at}")
        self.kind = kind
        self.index = index
        self.value = value
        self.t = t


class StepSizeUnderflow(NumericalError):
    def __init__(self, t: float, message: str = ""):
        super().__init__(f"step size underflow at t={t!r}" + (f": {message}" if message else ""))
        self.t = t


class OutOfRange(NumericalError):
    pass


class SingularA(NumericalError):
    pass


class ZeroThroughflow(NumericalError):
    def __init__(self, compartment: int):
        super().__init__(f"zero throughflow at compartment {compartment}")
        self.compartment = compartment


class QuadratureNonconvergence(NumericalError):
    pass


class PathSetTooLarge(NumericalError):
    pass


class UnreachableOutput(UserWarning):
    pass


class DegenerateDiagonal(UserWarning):
    pass
