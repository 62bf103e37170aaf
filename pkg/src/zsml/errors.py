"""Exception hierarchy shared by all zsml modules.

Two broad families matter to callers: usage errors (bad shapes, bad
parameters, malformed files) and numerical failures (non-finite values,
diverged training). The CLI maps the former to exit code 2 and the
latter to exit code 3.
"""


class ZsmlError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ZsmlError):
    """Tensor or array dimensions are incompatible with the operation."""


class ParameterError(ZsmlError):
    """A hyperparameter or argument is outside its valid range."""


class GradientContractError(ZsmlError):
    """Backward pass invoked in a way that violates its contract."""


class LabelError(ZsmlError):
    """A class label is outside the expected label space."""


class BatchError(ZsmlError):
    """A batch is empty or too small for the requested operation."""


class ClassBudgetError(ZsmlError):
    """A dataset has fewer classes than an episode spec requires."""


class ShotBudgetError(ZsmlError):
    """A class has fewer samples than an episode spec requires."""


class TrainingDataError(ZsmlError):
    """A classifier training set is degenerate (e.g. a single class)."""


class AttributeRowError(ZsmlError):
    """A class id has no row in the attribute matrix."""


class FormatError(ZsmlError):
    """A serialized file is malformed (bad magic, version, or truncation)."""


class IntegrityError(ZsmlError):
    """A deserialized object violates one of its structural invariants."""


class ProtocolError(ZsmlError):
    """A dataset lacks the test partitions an evaluation protocol needs."""


class NonFiniteError(ZsmlError):
    """A NaN or Inf was produced; surfaced instead of propagating silently."""


class TrainingAbortError(NonFiniteError):
    """Training diverged; carries the iteration at which it happened."""

    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
