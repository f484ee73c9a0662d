"""Target detectors: cell-averaging CFAR and curve-fitting / peak-separation CFAR."""

from .cfar import CfarConfig, Detection, DetectorKind, ca_cfar_2d, cfar_mask, threshold_multiplier
from .cfps import ClutterRegion, cfps_detect, learn_clutter_region, map_peak_features
from .peaks import PeakFeatures, extract_peak_features

__all__ = [
    "CfarConfig", "Detection", "DetectorKind", "ca_cfar_2d", "cfar_mask", "threshold_multiplier",
    "ClutterRegion", "cfps_detect", "learn_clutter_region", "map_peak_features",
    "PeakFeatures", "extract_peak_features",
]
