"""Box arithmetic, IoU and greedy non-maximum suppression.

Boxes are fractions of image width/height, so the same box is valid at any
image scale.
"""
from dataclasses import dataclass, replace
from typing import Iterable, List, Literal, Sequence, Tuple
import math
import numpy as np
from ..utils.errors import CorruptedPredictionError

Scale = Literal["original", "enlarged"]
Variant = Literal["initial", "shrunk", "expanded"]

SCALE_RANK = {"original": 0, "enlarged": 1}
VARIANT_RANK = {"initial": 0, "shrunk": 1, "expanded": 2}


@dataclass(frozen=True)
class NormalizedBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.x_min <= self.x_max <= 1.0 and 0.0 <= self.y_min <= self.y_max <= 1.0):
            raise ValueError(f"Invalid normalized box {self.as_tuple()}")

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass(frozen=True)
class Provenance:
    scale: Scale = "original"
    variant: Variant = "initial"
    cell: int = 0


@dataclass(frozen=True)
class Proposal:
    box: NormalizedBox
    score: float
    provenance: Provenance = Provenance()

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"Proposal score must lie in [0, 1], got {self.score}")

    def with_scale(self, scale: Scale) -> "Proposal":
        return replace(self, provenance=replace(self.provenance, scale=scale))

    def with_variant(self, box: NormalizedBox, variant: Variant) -> "Proposal":
        return Proposal(box, self.score, replace(self.provenance, variant=variant))


def rank_key(prop: Proposal) -> Tuple[float, int, int, int]:
    """Descending score, then original before enlarged, initial < shrunk < expanded, then cell."""
    prov = prop.provenance
    return (-prop.score, SCALE_RANK[prov.scale], VARIANT_RANK[prov.variant], prov.cell)


def sort_proposals(props: Iterable[Proposal]) -> List[Proposal]:
    return sorted(props, key=rank_key)


def top_k(props: Iterable[Proposal], k: int) -> List[Proposal]:
    return sort_proposals(props)[:k]


def boxes_array(items: Sequence) -> np.ndarray:
    """Stack boxes (or proposals' boxes) into an (n, 4) float64 array."""
    if not items:
        return np.zeros((0, 4), dtype=np.float64)
    boxes = [item.box if isinstance(item, Proposal) else item for item in items]
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (n, 4) and (m, 4) box arrays; zero-area boxes score 0."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    valid = (area_a[:, None] > 0) & (area_b[None, :] > 0)
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=valid)
    return out


def iou(a: NormalizedBox, b: NormalizedBox) -> float:
    """Intersection over union of two boxes."""
    return float(iou_matrix(np.array(a.as_tuple()), np.array(b.as_tuple()))[0, 0])


def nms(props: Sequence[Proposal], overlap_threshold: float) -> List[Proposal]:
    """Greedy NMS; a proposal is dropped when IoU > threshold with a kept one."""
    if not 0.0 < overlap_threshold <= 1.0:
        raise ValueError(f"NMS threshold must lie in (0, 1], got {overlap_threshold}")
    ordered = sort_proposals(props)
    if not ordered:
        return []

    boxes = boxes_array(ordered)
    suppressed = np.zeros(len(ordered), dtype=bool)
    keep: List[int] = []
    for i in range(len(ordered)):
        if suppressed[i]:
            continue
        keep.append(i)
        rest = np.flatnonzero(~suppressed[i + 1:]) + i + 1
        if rest.size == 0:
            break
        overlaps = iou_matrix(boxes[i], boxes[rest])[0]
        suppressed[rest[overlaps > overlap_threshold]] = True
    return [ordered[i] for i in keep]


def clip(values: Sequence[float]) -> NormalizedBox:
    """Clamp a raw 4-tuple into [0, 1]; inverted sides collapse to their midpoint."""
    if len(values) != 4:
        raise ValueError(f"Expected 4 coordinates, got {len(values)}")
    if not all(math.isfinite(v) for v in values):
        raise CorruptedPredictionError(f"Non-finite box coordinates {tuple(values)}")
    x0, y0, x1, y1 = (min(max(float(v), 0.0), 1.0) for v in values)
    if x0 > x1:
        x0 = x1 = (x0 + x1) / 2.0
    if y0 > y1:
        y0 = y1 = (y0 + y1) / 2.0
    return NormalizedBox(x0, y0, x1, y1)


def clip_array(values: np.ndarray) -> np.ndarray:
    """Vectorized `clip` over a (..., 4) array."""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise CorruptedPredictionError("Non-finite values in predicted box grid")
    out = np.clip(values, 0.0, 1.0)
    for lo, hi in ((0, 2), (1, 3)):
        inverted = out[..., lo] > out[..., hi]
        mid = (out[..., lo] + out[..., hi]) / 2.0
        out[..., lo] = np.where(inverted, mid, out[..., lo])
        out[..., hi] = np.where(inverted, mid, out[..., hi])
    return out
