"""SLIC superpixels and superpixel-based proposal shrinkage/expansion."""
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union
import math
import numpy as np
from scipy import ndimage
from ..utils.conversions import pixel_span, span_to_fraction
from ..utils.imagefiles import save_labels
from .geometry import NormalizedBox, Proposal

# channels in [0, 1] are stretched to [0, 100] so that compactness keeps its
# usual CIELAB-scale meaning
COLOR_SCALE = 100.0


@dataclass(frozen=True)
class SuperpixelMap:
    labels: np.ndarray
    count: int
    pixel_counts: np.ndarray
    bounds: np.ndarray  # (count, 4) inclusive row_min, col_min, row_max, col_max

    @classmethod
    def from_labels(cls, labels: np.ndarray) -> "SuperpixelMap":
        labels = np.asarray(labels, dtype=np.int64)
        count = int(labels.max()) + 1
        flat = labels.ravel()
        rows, cols = np.indices(labels.shape)
        bounds = np.empty((count, 4), dtype=np.int64)
        bounds[:, 0:2] = np.iinfo(np.int64).max
        bounds[:, 2:4] = -1
        np.minimum.at(bounds[:, 0], flat, rows.ravel())
        np.minimum.at(bounds[:, 1], flat, cols.ravel())
        np.maximum.at(bounds[:, 2], flat, rows.ravel())
        np.maximum.at(bounds[:, 3], flat, cols.ravel())
        return cls(labels, count, np.bincount(flat, minlength=count), bounds)

    def save_pgm(self, path: Union[str, Path]) -> None:
        """Debug dump of the label map as a 16-bit PGM."""
        save_labels(path, self.labels)


def _gradient_magnitude(color: np.ndarray) -> np.ndarray:
    padded = np.pad(color, ((1, 1), (1, 1), (0, 0)), mode="edge")
    dx = padded[1:-1, 2:] - padded[1:-1, :-2]
    dy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    return np.sum(dx ** 2, axis=-1) + np.sum(dy ** 2, axis=-1)


def _initial_centers(color: np.ndarray, k: int) -> np.ndarray:
    """Regular grid seeds moved to the lowest-gradient pixel of their 3x3 neighborhood."""
    height, width = color.shape[:2]
    nx = max(1, min(width, math.ceil(math.sqrt(k * width / height))))
    ny = max(1, min(height, round(k / nx)))
    gradient = _gradient_magnitude(color)
    # the seed itself comes first so that flat neighborhoods keep it in place
    moves = [(0, 0)] + [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]

    centers = []
    for i in range(ny):
        for j in range(nx):
            # grid positions stay fractional so that equal tiles get equal pixel counts
            fy = (i + 0.5) * height / ny - 0.5
            fx = (j + 0.5) * width / nx - 0.5
            y, x = min(max(int(round(fy)), 0), height - 1), min(max(int(round(fx)), 0), width - 1)
            candidates = [(dy, dx) for dy, dx in moves
                          if 0 <= y + dy < height and 0 <= x + dx < width]
            dy, dx = min(candidates, key=lambda d: gradient[y + d[0], x + d[1]])
            cy = min(max(fy + dy, 0.0), height - 1.0)
            cx = min(max(fx + dx, 0.0), width - 1.0)
            centers.append(np.concatenate([color[y + dy, x + dx], [cy, cx]]))
    return np.array(centers, dtype=np.float64)


def _assign(color: np.ndarray, centers: np.ndarray, step: float, compactness: float) -> np.ndarray:
    height, width, channels = color.shape
    labels = np.full((height, width), -1, dtype=np.int64)
    distance = np.full((height, width), np.inf)
    spatial_weight = (compactness / step) ** 2
    radius = int(math.ceil(step))

    for idx, center in enumerate(centers):
        cy, cx = center[channels], center[channels + 1]
        y0, y1 = max(int(cy) - radius, 0), min(int(cy) + radius + 1, height)
        x0, x1 = max(int(cx) - radius, 0), min(int(cx) + radius + 1, width)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        d_color = np.sum((color[y0:y1, x0:x1] - center[:channels]) ** 2, axis=-1)
        d = d_color + ((yy - cy) ** 2 + (xx - cx) ** 2) * spatial_weight
        window_dist = distance[y0:y1, x0:x1]
        better = d < window_dist
        window_dist[better] = d[better]
        labels[y0:y1, x0:x1][better] = idx

    orphaned = labels < 0
    if orphaned.any():
        ys, xs = np.nonzero(orphaned)
        d_color = np.sum((color[ys, xs][:, None, :] - centers[None, :, :channels]) ** 2, axis=-1)
        d_space = (ys[:, None] - centers[None, :, channels]) ** 2 + (xs[:, None] - centers[None, :, channels + 1]) ** 2
        labels[ys, xs] = np.argmin(d_color + d_space * spatial_weight, axis=1)
    return labels


def _update(color: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> np.ndarray:
    height, width, channels = color.shape
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=len(centers)).astype(np.float64)
    rows, cols = np.indices((height, width))
    features = np.concatenate(
        [color.reshape(-1, channels), rows.reshape(-1, 1), cols.reshape(-1, 1)], axis=1
    )
    updated = centers.copy()
    nonempty = counts > 0
    for f in range(features.shape[1]):
        sums = np.bincount(flat, weights=features[:, f], minlength=len(centers))
        updated[nonempty, f] = sums[nonempty] / counts[nonempty]
    return updated


def enforce_connectivity(labels: np.ndarray) -> np.ndarray:
    """Give every label a single 4-connected component.

    The largest component of a label keeps it; each other component joins the
    neighboring label it shares the most boundary pixels with.
    """
    labels = labels.copy()
    while True:
        orphans = []
        for value in np.unique(labels):
            components, count = ndimage.label(labels == value)
            if count <= 1:
                continue
            keep = int(np.argmax(np.bincount(components.ravel())[1:])) + 1
            orphans += [components == c for c in range(1, count + 1) if c != keep]
        if not orphans:
            return labels
        for orphan in orphans:
            own = labels[orphan][0]
            ring = ndimage.binary_dilation(orphan) & ~orphan
            neighbors = labels[ring]
            neighbors = neighbors[neighbors != own]
            if neighbors.size:
                labels[orphan] = int(np.argmax(np.bincount(neighbors)))


def relabel_sequential(labels: np.ndarray) -> np.ndarray:
    """Renumber labels 0..K-1 in raster order of first appearance."""
    values, first = np.unique(labels.ravel(), return_index=True)
    order = values[np.argsort(first)]
    lookup = np.empty(int(values.max()) + 1, dtype=np.int64)
    lookup[order] = np.arange(order.size)
    return lookup[labels]


def slic(image: np.ndarray, k: int, compactness: float = 10.0, iterations: int = 10) -> SuperpixelMap:
    """k-means superpixels over (color, position) with localized 2S x 2S search windows."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[..., None]
    height, width = image.shape[:2]
    pixel_count = height * width
    if k < 1 or k > pixel_count:
        raise ValueError(f"Segment count must lie in [1, {pixel_count}], got {k}")

    color = image * COLOR_SCALE
    step = math.sqrt(pixel_count / k)
    centers = _initial_centers(color, k)
    labels = np.zeros((height, width), dtype=np.int64)
    for _ in range(iterations):
        labels = _assign(color, centers, step, compactness)
        centers = _update(color, labels, centers)

    labels = relabel_sequential(enforce_connectivity(labels))
    return SuperpixelMap.from_labels(labels)


def _to_box(row_min: int, col_min: int, row_max: int, col_max: int, height: int, width: int) -> NormalizedBox:
    x_min, x_max = span_to_fraction(col_min, col_max, width)
    y_min, y_max = span_to_fraction(row_min, row_max, height)
    return NormalizedBox(x_min, y_min, x_max, y_max)


def refine(prop: Proposal, sp: SuperpixelMap) -> Tuple[Proposal, Proposal]:
    """Shrink to superpixels entirely inside the box; expand to all it touches."""
    height, width = sp.labels.shape
    c0, c1 = pixel_span(prop.box.x_min, prop.box.x_max, width)
    r0, r1 = pixel_span(prop.box.y_min, prop.box.y_max, height)

    touching = np.unique(sp.labels[r0:r1 + 1, c0:c1 + 1])
    bounds = sp.bounds[touching]
    inside = (bounds[:, 0] >= r0) & (bounds[:, 1] >= c0) & (bounds[:, 2] <= r1) & (bounds[:, 3] <= c1)

    expanded_box = _to_box(bounds[:, 0].min(), bounds[:, 1].min(),
                           bounds[:, 2].max(), bounds[:, 3].max(), height, width)
    if inside.any():
        kept = bounds[inside]
        shrunk_box = _to_box(kept[:, 0].min(), kept[:, 1].min(), kept[:, 2].max(), kept[:, 3].max(),
                             height, width)
    else:
        shrunk_box = prop.box
    return prop.with_variant(shrunk_box, "shrunk"), prop.with_variant(expanded_box, "expanded")
