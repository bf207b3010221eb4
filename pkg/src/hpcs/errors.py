"""Exception types shared across the codec."""


class ShapeError(ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ParameterError(ValueError):
    """An argument is outside its documented domain."""


class NumericError(ArithmeticError):
    """A numeric domain violation (log of non-positive, non-finite pmf, ...)."""


class TapeError(RuntimeError):
    """A computation tape was replayed without being rebuilt."""


class FormatError(ValueError):
    """A serialized stream is malformed. Carries the byte offset when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class StreamError(FormatError):
    """Frame-level inconsistency while coding or decoding a stream."""


class TrainingDivergence(RuntimeError):
    """Per-frame optimization produced a non-finite loss."""

    def __init__(self, iteration, lam):
        super().__init__(
            f"non-finite loss at iteration {iteration} (lambda={lam})"
        )
        self.iteration = iteration
        self.lam = lam
