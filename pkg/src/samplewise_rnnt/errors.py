"""Exception types shared across the package."""


class InvalidShapeError(ValueError):
    """Tensor extents are out of range or inconsistent between operands."""


class InvalidInputError(ValueError):
    """A non-shape argument is outside its valid domain."""


class NumericalDegeneracyError(ArithmeticError):
    """A loss or gradient computation produced a non-finite value."""


class InstanceTooLargeError(ValueError):
    """A brute-force oracle was asked to enumerate too many alignments."""


class OutOfMemoryError(MemoryError):
    """Raised when an allocation would push live bytes past the tracker ceiling.

    Attributes:
        name: label of the tensor that failed to allocate.
        nbytes: payload size of the failed allocation.
        live_bytes: tracker live bytes at the moment of failure.
        ceiling_bytes: the configured ceiling.
    """

    def __init__(self, name, nbytes, live_bytes, ceiling_bytes):
        self.name = name
        self.nbytes = nbytes
        self.live_bytes = live_bytes
        self.ceiling_bytes = ceiling_bytes
        super().__init__(
            f"allocation of {name or 'tensor'} ({nbytes} bytes) exceeds ceiling: "
            f"{live_bytes} live + {nbytes} > {ceiling_bytes}"
        )
