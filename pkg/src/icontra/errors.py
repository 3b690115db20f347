"""Exception taxonomy shared by the pipeline, service and CLI."""


class IcontraError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(IcontraError):
    """Caller violated a precondition (bad shape, out-of-range value, ...)."""


class NumericalFailureError(IcontraError):
    """Non-finite values showed up in the diffusion math.

    Carries the denoising step index when the failure happened inside a
    stepping loop.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class EmptyMaskError(IcontraError):
    """Object-mask extraction produced a mask below the minimum area."""


class NotFoundError(IcontraError):
    """Unknown session / cell / job / result id."""


class ConflictError(IcontraError):
    """Operation not valid in the current session state."""


class InternalError(IcontraError):
    """Invariant violation that indicates a bug, e.g. branch desync."""
