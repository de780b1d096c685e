"""Exception types shared across the toolkit."""


class GarmentKitError(Exception):
    """Base class for all toolkit errors."""


class DegenerateBoundary(GarmentKitError):
    """Template parameters produce a self-intersecting or collapsed outline."""


class TriangulationFailure(GarmentKitError):
    """Meshing could not satisfy its structural guarantees."""


class AnchorOutOfMesh(GarmentKitError):
    """A keypoint anchor has no mesh vertex close enough to bind to."""


class NumericalDivergence(GarmentKitError):
    """The cloth solver produced non-finite positions or velocities."""


class FramingFailure(GarmentKitError):
    """No sampled camera kept the whole garment inside the frame margin."""


class BehindCamera(GarmentKitError):
    """Attempted to project a point at or behind the camera plane."""


class RayParallelToPlane(GarmentKitError):
    """Pixel ray does not intersect the requested plane."""


class DeprojectionError(GarmentKitError):
    """Pixel ray misses the plane on the camera's side."""


class MissingLabel(GarmentKitError):
    """An action plan references a keypoint label absent from the frame."""


class DegenerateAction(GarmentKitError):
    """Pick and place collapse to the same point."""


class UnsupportedPrimitive(GarmentKitError):
    """Decoder asked for a manipulation primitive it does not implement."""


class EmptyInput(GarmentKitError):
    """An operation that needs at least one record received none."""


class DistractorOverlap(GarmentKitError):
    """A distractor pose intersects the garment footprint."""


class ParseError(GarmentKitError):
    """Malformed answer text.

    Attributes:
        offset: byte offset into the original string where parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset
