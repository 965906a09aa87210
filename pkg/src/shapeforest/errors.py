"""Exception types shared across the package."""


class ShapeForestError(Exception):
    """Base class for all shapeforest errors."""


# --- raster / file parsing ---------------------------------------------------

class MalformedHeader(ShapeForestError):
    pass


class TruncatedData(ShapeForestError):
    pass


class UnsupportedMagic(ShapeForestError):
    pass


class IoError(ShapeForestError):
    """File-level failure that is not a parse error (missing path, bad schema)."""


# --- geometry / shape model --------------------------------------------------

class DegenerateShape(ShapeForestError):
    pass


class EmptyTrainingSet(ShapeForestError):
    pass


class InconsistentLandmarkCount(ShapeForestError):
    pass


class DimensionMismatch(ShapeForestError):
    pass


# --- features / forest -------------------------------------------------------

class InvalidTableId(ShapeForestError):
    pass


class SingleClassDataset(ShapeForestError):
    pass


class EmptyDataset(ShapeForestError):
    pass


class ResolutionMismatch(ShapeForestError):
    pass


class CountMismatch(ShapeForestError):
    pass


# --- fitting / pipeline ------------------------------------------------------

class InfeasibleInit(ShapeForestError):
    pass


class BoxOutsideImage(ShapeForestError):
    pass


class LengthMismatch(ShapeForestError):
    pass


class ZeroVariance(ShapeForestError):
    pass


class BadKeyIndices(ShapeForestError):
    pass


# --- configuration / CLI -----------------------------------------------------

class ConfigError(ShapeForestError):
    pass


class ModelMismatch(ShapeForestError):
    pass
