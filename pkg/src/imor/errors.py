"""Exception hierarchy.

Validation problems (bad input files, inconsistent dimensions) derive from
:class:`ValidationError`; failures of the numerics derive from
:class:`NumericalError`.  The CLI maps them to exit codes 2 and 3.
"""


class IMORError(Exception):
    exit_code = 1


class ValidationError(IMORError):
    exit_code = 2


class NumericalError(IMORError):
    exit_code = 3


class ParseError(ValidationError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class DimensionError(ValidationError):
    pass


class MissingArtifactError(ValidationError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing artifacts: " + ", ".join(self.missing))


class RankDeficiencyError(NumericalError):
    pass


class IndexExceededError(NumericalError):
    pass


class SingularPencilError(NumericalError):
    pass


class IndexNotOneError(NumericalError):
    pass


class SingularE1Error(NumericalError):
    pass


class SingularSubsystemError(NumericalError):
    pass


class SingularMassMatrixError(NumericalError):
    pass


class SingularIterationMatrixError(NumericalError):
    pass


class SingularAlgebraicBlockError(NumericalError):
    pass


class SingularReducedPencilError(NumericalError):
    pass


class NonPhysicalPressureError(NumericalError):
    pass


class NewtonDivergenceError(NumericalError):
    def __init__(self, step, residual, message=None):
        self.step = step
        self.residual = residual
        super().__init__(message or f"Newton failed at step {step}, residual {residual:.3e}")


class EmptySnapshotsError(NumericalError):
    pass


class ZeroReferenceError(NumericalError):
    pass
