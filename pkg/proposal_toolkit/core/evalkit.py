"""Proposal evaluation: best overlap, recall, AR, ABO and per-area breakdowns."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union
import numpy as np
import pandas as pd
from ..utils.errors import ArtifactIOError
from .geometry import NormalizedBox, Proposal, boxes_array, iou_matrix
from .gridcodec import TargetBundle

AR_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

RECALL_COLUMNS = ["n", "iou", "recall"]
AR_COLUMNS = ["n", "ar"]
ABO_COLUMNS = ["n", "abo"]
ABO_AREA_COLUMNS = ["area_lo", "area_hi", "abo"]
RECALL_AREA_COLUMNS = ["area_lo", "area_hi", "detected", "total"]
LOC_ERROR_COLUMNS = ["group", "x_min", "y_min", "x_max", "y_max"]


@dataclass(frozen=True)
class GroundTruth:
    image_id: int
    box: NormalizedBox
    area: int
    ignore: bool = False


@dataclass
class EvalReport:
    best_overlaps: Dict[int, np.ndarray] = field(default_factory=dict)
    recall: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=RECALL_COLUMNS))
    ar: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=AR_COLUMNS))
    abo: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=ABO_COLUMNS))
    abo_by_area: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=ABO_AREA_COLUMNS))
    recall_by_area: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=RECALL_AREA_COLUMNS))


def best_overlap(gt: NormalizedBox, props: Sequence[Proposal], n: Optional[int] = None) -> float:
    """Max IoU of gt against the first n proposals (all when n is None)."""
    head = props if n is None else props[:n]
    if not head:
        return 0.0
    return float(iou_matrix(np.array(gt.as_tuple()), boxes_array(head)).max())


def best_overlaps(gts: Sequence[GroundTruth], props_by_image: Mapping[int, Sequence[Proposal]],
                  n: int) -> np.ndarray:
    """Best overlap of every ground truth against its own image's top-n proposals."""
    out = np.zeros(len(gts), dtype=np.float64)
    by_image: Dict[int, List[int]] = {}
    for i, gt in enumerate(gts):
        by_image.setdefault(gt.image_id, []).append(i)
    for image_id, index in by_image.items():
        head = list(props_by_image.get(image_id, ()))[:n]
        if not head:
            continue
        gt_boxes = np.array([gts[i].box.as_tuple() for i in index])
        out[index] = iou_matrix(gt_boxes, boxes_array(head)).max(axis=1)
    return out


def _counted(gts: Sequence[GroundTruth]) -> List[GroundTruth]:
    return [gt for gt in gts if not gt.ignore]


def _as_mapping(props: Union[Sequence[Proposal], Mapping[int, Sequence[Proposal]]],
                gts: Sequence[GroundTruth]) -> Mapping[int, Sequence[Proposal]]:
    """A flat proposal list is shared by every image in gts."""
    if isinstance(props, Mapping):
        return props
    return {gt.image_id: props for gt in gts}


def recall_at(gts: Sequence[GroundTruth], props, iou_threshold: float, n: int) -> float:
    gts = _counted(gts)
    if not gts:
        return 0.0
    overlaps = best_overlaps(gts, _as_mapping(props, gts), n)
    return float(np.mean(overlaps >= iou_threshold))


def average_recall(gts: Sequence[GroundTruth], props, n: int,
                   thresholds: Sequence[float] = AR_THRESHOLDS) -> float:
    """Recall averaged over the IoU grid 0.50, 0.55, ..., 0.95."""
    gts = _counted(gts)
    if not gts:
        return 0.0
    overlaps = best_overlaps(gts, _as_mapping(props, gts), n)
    return float(np.mean([np.mean(overlaps >= t) for t in thresholds]))


def abo(gts: Sequence[GroundTruth], props, n: int) -> float:
    gts = _counted(gts)
    if not gts:
        return 0.0
    return float(np.mean(best_overlaps(gts, _as_mapping(props, gts), n)))


def _bins(bin_edges: Sequence[float]):
    edges = list(bin_edges)
    return list(zip(edges[:-1], edges[1:]))


def _in_bin(area: float, lo: float, hi: float, last: bool) -> bool:
    return lo <= area < hi or (last and area == hi)


def abo_by_area(gts: Sequence[GroundTruth], props, n: int,
                bin_edges: Sequence[float]) -> pd.DataFrame:
    """Mean best overlap per ground-truth area bin; empty bins are left out."""
    gts = _counted(gts)
    overlaps = best_overlaps(gts, _as_mapping(props, gts), n) if gts else np.zeros(0)
    bins = _bins(bin_edges)
    rows = []
    for b, (lo, hi) in enumerate(bins):
        members = [i for i, gt in enumerate(gts) if _in_bin(gt.area, lo, hi, b == len(bins) - 1)]
        if members:
            rows.append({"area_lo": lo, "area_hi": hi, "abo": float(np.mean(overlaps[members]))})
    return pd.DataFrame(rows, columns=ABO_AREA_COLUMNS)


def recall_by_area(gts: Sequence[GroundTruth], props, n: int, iou_threshold: float,
                   bin_edges: Sequence[float]) -> pd.DataFrame:
    """Detected and total ground-truth counts per area bin."""
    gts = _counted(gts)
    overlaps = best_overlaps(gts, _as_mapping(props, gts), n) if gts else np.zeros(0)
    bins = _bins(bin_edges)
    rows = []
    for b, (lo, hi) in enumerate(bins):
        members = [i for i, gt in enumerate(gts) if _in_bin(gt.area, lo, hi, b == len(bins) - 1)]
        rows.append({"area_lo": lo, "area_hi": hi,
                     "detected": int(np.sum(overlaps[members] >= iou_threshold)) if members else 0,
                     "total": len(members)})
    return pd.DataFrame(rows, columns=RECALL_AREA_COLUMNS)


def evaluate(gts: Sequence[GroundTruth], props_by_image: Mapping[int, Sequence[Proposal]],
             n_values: Sequence[int], iou_thresholds: Sequence[float],
             bin_edges: Sequence[float], area_n: int = 1000,
             area_iou_threshold: float = 0.5) -> EvalReport:
    """All curve families for one proposal set; proposals must already be in rank order."""
    counted = _counted(gts)
    report = EvalReport()
    recall_rows, ar_rows, abo_rows = [], [], []
    for n in n_values:
        overlaps = best_overlaps(counted, props_by_image, n) if counted else np.zeros(0)
        report.best_overlaps[n] = overlaps
        for t in iou_thresholds:
            recall = float(np.mean(overlaps >= t)) if counted else 0.0
            recall_rows.append({"n": n, "iou": t, "recall": recall})
        ar = float(np.mean([np.mean(overlaps >= t) for t in AR_THRESHOLDS])) if counted else 0.0
        ar_rows.append({"n": n, "ar": ar})
        abo_rows.append({"n": n, "abo": float(np.mean(overlaps)) if counted else 0.0})

    report.recall = pd.DataFrame(recall_rows, columns=RECALL_COLUMNS)
    report.ar = pd.DataFrame(ar_rows, columns=AR_COLUMNS)
    report.abo = pd.DataFrame(abo_rows, columns=ABO_COLUMNS)
    report.abo_by_area = abo_by_area(counted, props_by_image, area_n, bin_edges)
    report.recall_by_area = recall_by_area(counted, props_by_image, area_n, area_iou_threshold, bin_edges)
    return report


def emit_report(report: EvalReport, directory: Union[str, Path]) -> Dict[str, Path]:
    """One CSV per curve family, 6-decimal values, header always present."""
    directory = Path(directory)
    tables = {
        "recall.csv": report.recall,
        "ar.csv": report.ar,
        "abo.csv": report.abo,
        "abo_by_area.csv": report.abo_by_area,
        "recall_by_area.csv": report.recall_by_area,
    }
    paths: Dict[str, Path] = {}
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for name, table in tables.items():
            path = directory / name
            table.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
            paths[name] = path
    except OSError as e:
        raise ArtifactIOError(f"Cannot write report to {directory}: {e}") from e
    return paths


def localization_errors(predicted: Sequence[np.ndarray], targets: Sequence[TargetBundle],
                        areas: Sequence[Mapping[int, int]], area_threshold: int) -> pd.DataFrame:
    """Mean per-coordinate squared (L2) error over foreground cells, split by object size.

    `predicted[i]` is an (H, W, 4) absolute grid for scene i; each cell is
    scored against the box of the instance under its center.
    """
    errors = {"large": [], "small": []}
    for grid, target, scene_areas in zip(predicted, targets, areas):
        fg = target.cell_instances != 0
        if not fg.any():
            continue
        diff = (grid[fg] - target.coord_targets.values[fg]) ** 2
        large = np.array([scene_areas[int(i)] > area_threshold for i in target.cell_instances[fg]])
        errors["large"].append(diff[large])
        errors["small"].append(diff[~large])

    rows = []
    for group in ("large", "small"):
        stacked = np.concatenate(errors[group]) if errors[group] else np.zeros((0, 4))
        if stacked.size:
            rows.append({"group": group, **dict(zip(LOC_ERROR_COLUMNS[1:], stacked.mean(axis=0)))})
    return pd.DataFrame(rows, columns=LOC_ERROR_COLUMNS)
