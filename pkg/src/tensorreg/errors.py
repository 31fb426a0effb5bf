"""Exception hierarchy shared across the toolkit.

Shape/argument problems are ``ValueError`` subclasses so they behave like
ordinary numpy misuse; numerical breakdowns are ``ArithmeticError`` subclasses
so callers can distinguish "bad call" from "bad conditioning".
"""


class ShapeMismatchError(ValueError):
    """Operands have incompatible dimensions."""


class DataError(ValueError):
    """Dataset contents violate a precondition (non-finite values, bad labels, ...)."""


class ParseError(ValueError):
    """A serialized file is malformed; message carries the line or record position."""


class ModelIntegrityError(ValueError):
    """A model parameter violates its invariant (e.g. non-PSD covariance)."""


class NumericalError(ArithmeticError):
    """A numerical procedure broke down (singular system, underflow, divergence)."""


class DegenerateComponentError(NumericalError):
    """A mixture component received too little responsibility mass to be refit."""

    def __init__(self, component: int, mass: float, floor: float):
        self.component = component
        self.mass = mass
        self.floor = floor
        super().__init__(
            f"component {component} has total responsibility {mass:.3g} "
            f"below the floor {floor:.3g}"
        )
