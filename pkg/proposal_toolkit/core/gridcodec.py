"""Per-cell box targets and the offset <-> absolute coordinate codec.

A network predicts, for every output cell, the offsets from the cell center
to the sides of the box of the object covering that cell. Adding the cell's
own normalized coordinates turns offsets into absolute boxes.
"""
from dataclasses import dataclass
from typing import Literal, Mapping, Optional
import numpy as np
from .geometry import NormalizedBox

GridMode = Literal["offsets", "absolute"]


@dataclass(frozen=True)
class GridGeometry:
    image_width: int
    image_height: int
    grid_width: int
    grid_height: int

    def __post_init__(self) -> None:
        if min(self.image_width, self.image_height, self.grid_width, self.grid_height) < 1:
            raise ValueError(f"Grid geometry needs positive sizes, got {self}")
        if self.grid_width > self.image_width or self.grid_height > self.image_height:
            raise ValueError(f"Output grid larger than the image: {self}")

    @property
    def shape(self) -> tuple:
        return (self.grid_height, self.grid_width)

    @property
    def cell_count(self) -> int:
        return self.grid_height * self.grid_width

    def cell_centers_px(self) -> tuple:
        """Pixel-space centers (x, y) of all cells, each of grid shape."""
        cols = (np.arange(self.grid_width) + 0.5) * self.image_width / self.grid_width
        rows = (np.arange(self.grid_height) + 0.5) * self.image_height / self.grid_height
        return np.meshgrid(cols, rows)

    def center_pixels(self) -> tuple:
        """Integer (row, col) of the pixel holding each cell center."""
        cx, cy = self.cell_centers_px()
        cols = np.minimum(np.floor(cx).astype(np.int64), self.image_width - 1)
        rows = np.minimum(np.floor(cy).astype(np.int64), self.image_height - 1)
        return rows, cols


@dataclass(frozen=True)
class CoordBasis:
    geometry: GridGeometry
    x: np.ndarray
    y: np.ndarray

    def stacked(self) -> np.ndarray:
        """(H, W, 4) array (x, y, x, y) matching the box coordinate order."""
        return np.stack([self.x, self.y, self.x, self.y], axis=-1)


@dataclass(frozen=True)
class PredictionGrid:
    geometry: GridGeometry
    values: np.ndarray
    mode: GridMode = "absolute"

    def __post_init__(self) -> None:
        if self.values.shape != self.geometry.shape + (4,):
            raise ValueError(
                f"Grid values of shape {self.values.shape} do not match geometry {self.geometry.shape}"
            )


@dataclass(frozen=True)
class TargetBundle:
    coord_targets: PredictionGrid
    fg_mask: np.ndarray
    size_mask: np.ndarray
    sample_weights: np.ndarray
    cell_instances: np.ndarray

    @property
    def large_mask(self) -> np.ndarray:
        return self.fg_mask * self.size_mask

    @property
    def small_mask(self) -> np.ndarray:
        return self.fg_mask * (1.0 - self.size_mask)


def make_coord_basis(geometry: GridGeometry) -> CoordBasis:
    cx, cy = geometry.cell_centers_px()
    return CoordBasis(geometry, cx / geometry.image_width, cy / geometry.image_height)


def _check_basis(grid: PredictionGrid, basis: CoordBasis, mode: GridMode) -> None:
    if grid.mode != mode:
        raise ValueError(f"Expected a grid in {mode} mode, got {grid.mode}")
    if grid.geometry != basis.geometry:
        raise ValueError(f"Geometry mismatch: grid {grid.geometry} vs basis {basis.geometry}")


def offsets_to_absolute(grid: PredictionGrid, basis: CoordBasis) -> PredictionGrid:
    _check_basis(grid, basis, "offsets")
    return PredictionGrid(grid.geometry, grid.values + basis.stacked(), "absolute")


def absolute_to_offsets(grid: PredictionGrid, basis: CoordBasis) -> PredictionGrid:
    _check_basis(grid, basis, "absolute")
    return PredictionGrid(grid.geometry, grid.values - basis.stacked(), "offsets")


def targets_from_instances(
    mask: np.ndarray,
    boxes: Mapping[int, NormalizedBox],
    areas: Mapping[int, int],
    geometry: GridGeometry,
    area_threshold: int,
    rng: Optional[np.random.Generator] = None,
    balance_samples: int = 100,
) -> TargetBundle:
    """Label every cell from the instance under its center pixel.

    Large instances (area > area_threshold) with more than `balance_samples`
    covered cells keep size-branch weight on a random subset of exactly that
    many cells.
    """
    if mask.shape != (geometry.image_height, geometry.image_width):
        raise ValueError(f"Mask shape {mask.shape} does not match image size of {geometry}")
    present = [int(i) for i in np.unique(mask) if i != 0]
    unlabelled = [i for i in present if i not in boxes or i not in areas]
    if unlabelled:
        raise ValueError(f"Instances {unlabelled} appear in the mask without a box and area")

    rows, cols = geometry.center_pixels()
    cell_ids = mask[rows, cols].astype(np.int64)

    coords = np.zeros(geometry.shape + (4,), dtype=np.float64)
    fg = (cell_ids != 0).astype(np.float64)
    size = np.zeros(geometry.shape, dtype=np.float64)
    weights = fg.copy()

    rng = rng if rng is not None else np.random.default_rng(0)
    for instance_id in np.unique(cell_ids[cell_ids != 0]):
        instance_id = int(instance_id)
        covered = cell_ids == instance_id
        coords[covered] = boxes[instance_id].as_tuple()
        if areas[instance_id] > area_threshold:
            size[covered] = 1.0
            flat = np.flatnonzero(covered)
            if flat.size > balance_samples:
                chosen = rng.choice(flat, size=balance_samples, replace=False)
                w = weights.reshape(-1)
                w[flat] = 0.0
                w[chosen] = 1.0

    return TargetBundle(
        coord_targets=PredictionGrid(geometry, coords, "absolute"),
        fg_mask=fg,
        size_mask=size,
        sample_weights=weights,
        cell_instances=cell_ids,
    )
