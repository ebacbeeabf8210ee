"""Scale-aware fusion of the two localizers and the enlarged inference scale."""
from dataclasses import dataclass
from typing import List, Sequence
import numpy as np
from scipy import ndimage
from .geometry import Proposal, clip_array
from .gridcodec import PredictionGrid


@dataclass(frozen=True)
class FusedGrid:
    fused: PredictionGrid
    z: np.ndarray
    p: np.ndarray


def fuse(t_l: PredictionGrid, t_s: PredictionGrid, z: np.ndarray) -> PredictionGrid:
    """Per-cell z * t_l + (1 - z) * t_s, clipped to valid boxes."""
    if t_l.geometry != t_s.geometry:
        raise ValueError(f"Geometry mismatch: {t_l.geometry} vs {t_s.geometry}")
    if t_l.mode != "absolute" or t_s.mode != "absolute":
        raise ValueError("fuse expects absolute-mode grids")
    z = np.asarray(z, dtype=np.float64)
    if z.shape != t_l.geometry.shape:
        raise ValueError(f"Weight grid of shape {z.shape} does not match {t_l.geometry.shape}")
    if np.any(z < 0.0) or np.any(z > 1.0):
        raise ValueError("Fusion weights must lie in [0, 1]")
    weight = z[..., None]
    combined = weight * t_l.values + (1.0 - weight) * t_s.values
    return PredictionGrid(t_l.geometry, clip_array(combined), "absolute")


def fuse_scale(t_l: PredictionGrid, t_s: PredictionGrid, p: np.ndarray, z: np.ndarray) -> FusedGrid:
    return FusedGrid(fuse(t_l, t_s, z), np.asarray(z, dtype=np.float64), np.asarray(p, dtype=np.float64))


def enlarge_image(image: np.ndarray, factor: float = 2.0) -> np.ndarray:
    """Half-pixel-centered bilinear upsampling of an HxW(xC) image; borders clamp."""
    if factor < 1.0:
        raise ValueError(f"Enlargement factor must be >= 1, got {factor}")
    image = np.asarray(image, dtype=np.float64)
    if factor == 1.0:
        return image.copy()
    zoom = (factor, factor) + (1.0,) * (image.ndim - 2)
    return ndimage.zoom(image, zoom, order=1, mode="nearest", grid_mode=True)


def map_back(props: Sequence[Proposal]) -> List[Proposal]:
    """Normalized boxes are scale invariant; only the provenance scale changes."""
    return [prop.with_scale("enlarged") for prop in props]
