"""Exception types shared across the package."""


class SSGraspError(Exception):
    pass


class DegenerateDirections(SSGraspError, ValueError):
    """Direction pair too close to zero / parallel to orthonormalize."""


class InvalidDirections(SSGraspError, ValueError):
    pass


class NegativeWidth(SSGraspError, ValueError):
    pass


class InvalidShapeParams(SSGraspError, ValueError):
    pass


class MissingNormals(SSGraspError, ValueError):
    pass


class EmptyCloud(SSGraspError, ValueError):
    pass


class NonFiniteInput(SSGraspError, ValueError):
    pass


class DegenerateRotation(SSGraspError, ValueError):
    pass


class DivergenceDetected(SSGraspError, ArithmeticError):
    pass


class ConfigError(SSGraspError, ValueError):
    """Bad run configuration. ``key`` names the offending entry when known."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class FormatError(SSGraspError, ValueError):
    pass
