class LabError(Exception):
    pass


class ConstructionError(LabError, ValueError):
    pass


class SizeError(LabError, ValueError):
    pass


class ArgumentError(LabError, ValueError):
    pass


class InfeasibleError(LabError, ValueError):
    pass


class ClassMembershipError(LabError, ValueError):
    pass


class DegenerateError(LabError, ValueError):
    pass


class RangeError(LabError, ArithmeticError):
    pass


class MassDriftError(LabError, ArithmeticError):
    pass


class NumericError(LabError, ArithmeticError):
    pass


class CoverageError(LabError, LookupError):
    pass
