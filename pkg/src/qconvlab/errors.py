"""Exception types shared across the package."""


class QConvLabError(Exception):
    """Base class for all errors raised by qconvlab."""


class InvalidArgumentError(QConvLabError, ValueError):
    pass


class LayoutMismatchError(QConvLabError, ValueError):
    pass


class ShapeError(QConvLabError, ValueError):
    pass


class InvalidSpecError(QConvLabError, ValueError):
    """Convolution geometry that does not produce an integral output extent."""


class ElemTypeError(QConvLabError, TypeError):
    pass


class UnsupportedOpError(QConvLabError, ValueError):
    pass


class NotApplicableError(QConvLabError, ValueError):
    pass
