from typing import Tuple
import math
import numpy as np


def to_unit_interval(values: np.ndarray) -> np.ndarray:
    """Convert 8-bit samples to floats in [0, 1]."""
    return values.astype(np.float64) / 255.0


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Quantize floats in [0, 1] to 8-bit samples (round half to even)."""
    return np.clip(np.rint(values * 255.0), 0, 255).astype(np.uint8)


def quantize_8bit(values: np.ndarray) -> np.ndarray:
    """Snap floats to the 8-bit grid so that a save/load round trip is exact."""
    return to_unit_interval(to_uint8(values))


def pixel_span(lo: float, hi: float, size: int) -> Tuple[int, int]:
    """Inclusive pixel index range covered by the fractional interval [lo, hi].

    Never empty: a zero-width interval still covers the pixel it falls in.
    """
    first = min(max(int(math.floor(lo * size)), 0), size - 1)
    last = min(max(int(math.ceil(hi * size)) - 1, 0), size - 1)
    return first, max(first, last)


def span_to_fraction(first: int, last: int, size: int) -> Tuple[float, float]:
    """Fractional interval covering the inclusive pixel range [first, last]."""
    return first / size, (last + 1) / size


def default_area_threshold(width: int, height: int) -> int:
    """Large/small split in pixels; 2,000 px at 513x513, scaled by image area."""
    return int(round(0.0076 * width * height))
