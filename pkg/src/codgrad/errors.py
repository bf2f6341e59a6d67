"""Exception hierarchy shared by every codgrad module."""


class CodgradError(Exception):
    """Base class for all errors raised by this package."""


# coding
class DimensionMismatch(CodgradError):
    pass


class DecodeIdentityViolated(CodgradError):
    def __init__(self, worst, index):
        self.worst = worst
        self.index = index
        super().__init__(
            f"A @ B deviates from the all-ones matrix by {worst:.3e} at entry {index}"
        )


class ZeroRow(CodgradError):
    def __init__(self, row):
        self.row = row
        super().__init__(f"row {row} of the decoding matrix is identically zero")


class EmptyRow(ZeroRow):
    """A neighbor set is empty under the zero threshold."""


class Infeasible(CodgradError):
    pass


# spectral
class NoConvergence(CodgradError):
    pass


class NotRowStochastic(CodgradError):
    pass


class NotSimple(CodgradError):
    pass


class BoundViolated(CodgradError):
    pass


# objectives
class IndivisiblePartition(CodgradError):
    pass


class Underdetermined(CodgradError):
    pass


class SingularNormalEquations(CodgradError):
    pass


class IndexOutOfRange(CodgradError, IndexError):
    pass


# engine
class NonFinite(CodgradError):
    def __init__(self, iteration, detail=""):
        self.iteration = iteration
        msg = f"non-finite iterate at iteration {iteration}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


# formation
class CoordinatorNotInGraph(CodgradError):
    pass


class InsufficientNodes(CodgradError):
    pass


class ThresholdUnmet(CodgradError):
    pass


class MissingKey(CodgradError):
    pass


class MissingAssignment(CodgradError):
    pass


class MessageCapExceeded(CodgradError):
    pass


# harness
class ZeroNorm(CodgradError):
    pass


class DegenerateSeries(CodgradError):
    pass


class ConstantsUnavailable(CodgradError):
    pass
