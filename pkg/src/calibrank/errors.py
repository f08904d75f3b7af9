"""Exception hierarchy for calibrank.

Loader/validation errors always name the offending tensor in their message so
batch runs can report actionable failures.
"""


class CalibrankError(Exception):
    """Base class for all calibrank errors."""


class BundleError(CalibrankError):
    """Feature-bundle container or invariant violation."""


class MissingTensor(BundleError):
    pass


class ShapeMismatch(BundleError):
    pass


class NonFiniteValue(BundleError):
    pass


class ManifestVersionUnsupported(BundleError):
    pass


class NonPositiveNorm(BundleError):
    pass


class AuditTensorsAbsent(CalibrankError):
    """Benign: the exporter did not include raw attention tensors."""


class ZeroVector(CalibrankError):
    pass


class GridMismatch(CalibrankError):
    pass


class DegenerateAttention(CalibrankError):
    pass


class EmptyQuery(CalibrankError):
    pass


class EmptyGallery(CalibrankError):
    pass


class MissingRelevance(CalibrankError):
    pass
