"""Exception types shared across the library."""


class ConsensusMeshError(Exception):
    """Base class for library errors."""


class ModelFormatError(ConsensusMeshError):
    """A model or parameter file is malformed or violates an invariant."""


class DegenerateFace(ConsensusMeshError):
    """A mesh face has (near-)zero area where geometry must be regular."""


class ResolutionMismatch(ConsensusMeshError):
    """Two raster maps that must share a resolution do not."""


class NoCommonParts(ConsensusMeshError):
    """No body part is observed in both images of a pair."""


class InsufficientData(ConsensusMeshError):
    """Not enough samples to fit a statistical component."""


class DegenerateConfiguration(ConsensusMeshError):
    """Point set too degenerate (collinear / rank deficient) to align."""


class Diverged(ConsensusMeshError):
    """Optimization produced a non-finite objective in every restart."""
