"""Exception types shared across the pipeline."""


class HdaError(Exception):
    """Base class for all pipeline errors."""


class BehindCamera(HdaError):
    """World point has non-positive depth in the camera frame."""


class OutOfBounds(HdaError):
    """Pixel coordinate lies outside the image."""


class OffImage(HdaError):
    """A predicted region falls entirely outside the second image."""


class ZeroBaseline(HdaError):
    """Relative motion has zero translation; epipolar geometry undefined."""


class TooFewMatches(HdaError):
    """Not enough matches to run geometric consensus (need >= 8)."""


class DegenerateGeometry(HdaError):
    """Point set is collinear/coincident; no unique plane exists."""


class AllPointsDegenerate(HdaError):
    """Every match was discarded during triangulation."""


class SpecError(HdaError):
    """A JSON spec document failed validation. Message carries the field path."""
