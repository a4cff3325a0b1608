"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class NotFoundError(KeyError):
    """A requested name is absent from a codebook or vocabulary."""


class FormatError(ValueError):
    """A file is malformed; message names the offending byte offset or line."""


class NumericalError(RuntimeError):
    """A training run produced a non-finite loss."""
