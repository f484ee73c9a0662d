"""Base-station ISAC sensing simulator: 5G-A frame and chirp waveform, scene synthesis,
range-Doppler processing, clutter cancellation, CFAR detection and IMM tracking."""

from .budget import LinkParams, max_detectable_range, rate_loss, snr_out
from .errors import ConfigError, IsacError, NumericalError
from .frame import Numerology, SlotPattern, build_schedule
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigError", "IsacError", "LinkParams", "NumericalError", "Numerology",
    "SlotPattern", "build_schedule", "max_detectable_range", "rate_loss", "snr_out",
]
