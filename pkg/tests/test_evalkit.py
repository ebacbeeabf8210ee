import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from proposal_toolkit.core.evalkit import (
    GroundTruth, abo, abo_by_area, average_recall, best_overlap, emit_report, evaluate, localization_errors,
    recall_at, recall_by_area,
)
from proposal_toolkit.core.geometry import NormalizedBox, Proposal
from proposal_toolkit.core.gridcodec import GridGeometry, targets_from_instances


def _prop(*box, score=0.5):
    return Proposal(NormalizedBox(*box), score)


def _gt(*box, image_id=0, area=20):
    return GroundTruth(image_id, NormalizedBox(*box), area)


def test_best_overlap_examples():
    gt = NormalizedBox(0, 0, .5, .5)
    assert best_overlap(gt, [Proposal(gt, .1)]) == pytest.approx(1.0)
    assert best_overlap(gt, []) == 0.0
    props = [_prop(.25, .25, .75, .75), _prop(0, 0, .4, .5)]
    assert best_overlap(gt, props) == pytest.approx(0.8)
    assert best_overlap(gt, props, n=1) == pytest.approx(1 / 7)


def test_recall_examples():
    gts = [_gt(0, 0, .5, .5), _gt(.5, .5, 1, 1)]
    exact = {0: [Proposal(g.box, .5) for g in gts]}
    assert recall_at(gts, exact, 0.95, 10) == 1.0
    assert recall_at(gts, {}, 0.5, 10) == 0.0

    props = {0: [_prop(0, 0, .4, .5), _prop(.5, .5, 1, .8)]}
    assert recall_at(gts, props, 0.7, 10) == 0.5


def test_average_recall_examples():
    gts = [_gt(0, 0, 1, 1)]
    assert average_recall(gts, {0: [_prop(0, 0, 1, 1)]}, 5) == pytest.approx(1.0)
    assert average_recall(gts, {0: [_prop(0, 0, .72, 1)]}, 5) == pytest.approx(0.5)
    assert average_recall(gts, {0: []}, 5) == 0.0


def test_abo_examples():
    gts = [_gt(0, 0, 1, 1), _gt(0, 0, 1, 1, image_id=1)]
    props = {0: [_prop(0, 0, .6, 1)], 1: [_prop(0, 0, .8, 1)]}
    assert abo(gts, props, 10) == pytest.approx(0.7)
    assert abo(gts, {0: [_prop(0, 0, 1, 1)], 1: [_prop(0, 0, 1, 1)]}, 1) == pytest.approx(1.0)


def test_proposals_only_match_their_own_image():
    gts = [_gt(0, 0, .5, .5, image_id=3)]
    assert recall_at(gts, {4: [_prop(0, 0, .5, .5)]}, 0.5, 10) == 0.0


def test_ignored_ground_truth_is_not_counted():
    gts = [_gt(0, 0, .5, .5), GroundTruth(0, NormalizedBox(.5, .5, 1, 1), 20, ignore=True)]
    assert recall_at(gts, {0: [_prop(0, 0, .5, .5)]}, 0.5, 10) == 1.0


def test_abo_by_area_omits_empty_bins():
    gts = [_gt(0, 0, .5, .5, area=10), _gt(.5, .5, 1, 1, area=40)]
    props = {0: [_prop(0, 0, .5, .5)]}
    table = abo_by_area(gts, props, 10, [0, 16, 31, 64, 128])
    assert list(table["area_lo"]) == [0, 31]
    assert list(table["abo"]) == pytest.approx([1.0, 0.0])


def test_recall_by_area_counts():
    gts = [_gt(0, 0, .5, .5, area=10), _gt(.5, .5, 1, 1, area=12), _gt(0, 0, 1, 1, area=100)]
    props = {0: [_prop(0, 0, .5, .5), _prop(0, 0, 1, 1)]}
    table = recall_by_area(gts, props, 10, 0.5, [0, 16, 64, 128])
    assert list(table["detected"]) == [1, 0, 1]
    assert list(table["total"]) == [2, 0, 1]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0, .5), st.floats(0, .5), st.floats(.5, 1), st.floats(.5, 1)),
                min_size=1, max_size=12))
def test_recall_is_monotone_in_proposal_count(raw):
    gts = [_gt(.1, .1, .6, .6), _gt(.4, .3, .9, .8)]
    props = {0: [_prop(*box) for box in raw]}
    values = [recall_at(gts, props, 0.5, n) for n in range(1, len(raw) + 1)]
    assert values == sorted(values)
    abos = [abo(gts, props, n) for n in range(1, len(raw) + 1)]
    assert abos == sorted(abos)


def test_evaluate_and_emit_report(tmp_path):
    gts = [_gt(0, 0, .5, .5), _gt(.5, .5, 1, 1, area=50)]
    props = {0: [_prop(0, 0, .5, .5, score=.9), _prop(.5, .5, 1, .9, score=.4)]}
    report = evaluate(gts, props, [1, 10], [0.5, 0.7, 0.9], [0, 31, 64], area_n=10)
    assert len(report.recall) == 2 * 3
    assert report.recall.set_index(["n", "iou"]).loc[(1, 0.5), "recall"] == 0.5
    assert report.recall.set_index(["n", "iou"]).loc[(10, 0.7), "recall"] == 1.0

    paths = emit_report(report, tmp_path / "report")
    assert set(paths) == {"recall.csv", "ar.csv", "abo.csv", "abo_by_area.csv", "recall_by_area.csv"}
    lines = paths["recall.csv"].read_text().splitlines()
    assert lines[0] == "n,iou,recall"
    assert lines[1] == "1,0.500000,0.500000"
    assert paths["ar.csv"].read_text().startswith("n,ar\n")
    assert paths["abo_by_area.csv"].read_text().startswith("area_lo,area_hi,abo\n")


def test_empty_report_keeps_headers(tmp_path):
    report = evaluate([], {}, [1], [0.5], [0, 31])
    paths = emit_report(report, tmp_path)
    assert paths["abo_by_area.csv"].read_text() == "area_lo,area_hi,abo\n"


def test_localization_errors_by_group():
    geometry = GridGeometry(8, 8, 4, 4)
    mask = np.zeros((8, 8), dtype=np.int64)
    mask[:, :4] = 1
    mask[:2, 6:] = 2
    boxes = {1: NormalizedBox(0, 0, .5, 1), 2: NormalizedBox(.75, 0, 1, .25)}
    areas = {1: 32, 2: 4}
    targets = targets_from_instances(mask, boxes, areas, geometry, 10)
    predicted = targets.coord_targets.values.copy()
    predicted[..., 0] += 0.1
    predicted[0, 0, 2] += 0.2
    table = localization_errors([predicted], [targets], [areas], 10).set_index("group")
    assert list(table.index) == ["large", "small"]
    assert table.loc["large", "x_min"] == pytest.approx(0.01)
    assert table.loc["small", "x_min"] == pytest.approx(0.01)
    # one of the eight large-object cells is off by 0.2
    assert table.loc["large", "x_max"] == pytest.approx(0.04 / 8)
    assert table.loc["small", "y_max"] == pytest.approx(0.0)
    assert isinstance(table, pd.DataFrame)


def _loop_best_overlaps(gts, props, n):
    best = []
    for gt in gts:
        g = gt.box.as_tuple()
        top = 0.0
        for prop in props.get(gt.image_id, [])[:n]:
            b = prop.box.as_tuple()
            iw = max(0.0, min(g[2], b[2]) - max(g[0], b[0]))
            ih = max(0.0, min(g[3], b[3]) - max(g[1], b[1]))
            inter = iw * ih
            union = (g[2] - g[0]) * (g[3] - g[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
            top = max(top, inter / union if union > 0 else 0.0)
        best.append(top)
    return best


def _random_boxes(rng, count):
    corners = rng.uniform(size=(count, 2, 2))
    lo, hi = corners.min(axis=1), corners.max(axis=1)
    return [NormalizedBox(*map(float, (lo[i, 0], lo[i, 1], hi[i, 0], hi[i, 1]))) for i in range(count)]


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("n", [1, 10, 100])
def test_metrics_match_double_loop(seed, n):
    rng = np.random.default_rng(seed)
    gts = [GroundTruth(i % 3, box, 20) for i, box in enumerate(_random_boxes(rng, 30))]
    props = {image_id: [Proposal(box, .5) for box in _random_boxes(rng, 60)] for image_id in range(3)}

    best = _loop_best_overlaps(gts, props, n)
    for threshold in (0.5, 0.7):
        expected = sum(1 for b in best if b >= threshold) / len(best)
        assert abs(recall_at(gts, props, threshold, n) - expected) <= 1e-12
    assert abs(abo(gts, props, n) - sum(best) / len(best)) <= 1e-12

    thresholds = [round(0.5 + 0.05 * i, 2) for i in range(10)]
    per_threshold = [sum(1 for b in best if b >= t) / len(best) for t in thresholds]
    assert abs(average_recall(gts, props, n) - sum(per_threshold) / 10) <= 1e-12
