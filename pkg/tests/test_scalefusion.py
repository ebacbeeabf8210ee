import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from proposal_toolkit.config.models import default_localization_spec
from proposal_toolkit.core.geometry import NormalizedBox, Proposal, Provenance, clip_array
from proposal_toolkit.core.gridcodec import GridGeometry, PredictionGrid
from proposal_toolkit.core.scalefusion import enlarge_image, fuse, map_back

GEOMETRY = GridGeometry(16, 16, 2, 3)


def _grid(values):
    return PredictionGrid(GEOMETRY, np.asarray(values, dtype=np.float64))


def _valid_boxes(rng):
    raw = rng.uniform(size=GEOMETRY.shape + (4,))
    lo = np.minimum(raw[..., :2], raw[..., 2:])
    hi = np.maximum(raw[..., :2], raw[..., 2:])
    return np.concatenate([lo, hi], axis=-1)


@pytest.mark.parametrize("weight", [0.0, 1.0])
def test_fusion_endpoints_are_exact(weight, rng):
    t_l, t_s = _grid(_valid_boxes(rng)), _grid(_valid_boxes(rng))
    fused = fuse(t_l, t_s, np.full(GEOMETRY.shape, weight))
    expected = t_l.values if weight == 1.0 else t_s.values
    assert np.array_equal(fused.values, expected)


def test_fusion_midpoint():
    t_l = _grid(np.tile([0.1, 0.1, 0.9, 0.9], GEOMETRY.shape + (1,)))
    t_s = _grid(np.tile([0.2, 0.2, 0.4, 0.4], GEOMETRY.shape + (1,)))
    fused = fuse(t_l, t_s, np.full(GEOMETRY.shape, 0.5))
    np.testing.assert_allclose(fused.values[0, 0], [0.15, 0.15, 0.65, 0.65])


@settings(deadline=None)
@given(arrays(np.float64, GEOMETRY.shape, elements=st.floats(0, 1)), st.integers(0, 2 ** 16))
def test_fusion_is_componentwise_convex(z, seed):
    rng = np.random.default_rng(seed)
    t_l, t_s = _valid_boxes(rng), _valid_boxes(rng)
    fused = fuse(_grid(t_l), _grid(t_s), z).values
    assert np.all(fused >= np.minimum(t_l, t_s) - 1e-12)
    assert np.all(fused <= np.maximum(t_l, t_s) + 1e-12)


def test_fusion_rejects_mismatched_inputs(rng):
    t_l = _grid(_valid_boxes(rng))
    other = PredictionGrid(GridGeometry(16, 16, 3, 2), np.zeros((2, 3, 4)))
    with pytest.raises(ValueError):
        fuse(t_l, other, np.zeros(GEOMETRY.shape))
    with pytest.raises(ValueError):
        fuse(t_l, t_l, np.full(GEOMETRY.shape, 1.5))


def test_fused_raw_values_are_clipped():
    raw = np.tile([-0.2, 0.1, 1.4, 0.5], GEOMETRY.shape + (1,))
    fused = fuse(_grid(raw), _grid(raw), np.ones(GEOMETRY.shape))
    np.testing.assert_array_equal(fused.values, clip_array(raw))


def test_enlarge_identity_factor(rng):
    image = rng.uniform(size=(5, 7, 3))
    assert np.array_equal(enlarge_image(image, 1.0), image)


def test_enlarge_constant_image():
    out = enlarge_image(np.full((2, 2), 0.3), 2.0)
    assert out.shape == (4, 4)
    np.testing.assert_allclose(out, 0.3)


def test_enlarge_half_pixel_bilinear():
    out = enlarge_image(np.array([[0.0, 1.0]]), 2.0)
    np.testing.assert_allclose(out, [[0.0, 0.25, 0.75, 1.0], [0.0, 0.25, 0.75, 1.0]])


def test_enlarge_color_image_interpolates_each_channel():
    image = np.stack([np.array([[0.0, 1.0], [2.0, 3.0]]) * (c + 1) for c in range(3)], axis=-1)
    out = enlarge_image(image, 2.0)
    assert out.shape == (4, 4, 3)
    # sample (0.25, 0.25) in source pixels: 0.1875 * 1 + 0.1875 * 2 + 0.0625 * 3
    np.testing.assert_allclose(out[1, 1], [0.75, 1.5, 2.25])
    np.testing.assert_allclose(out[0, 0], image[0, 0])
    np.testing.assert_allclose(out[3, 3], image[1, 1])


def test_enlarge_rejects_shrinking():
    with pytest.raises(ValueError):
        enlarge_image(np.zeros((4, 4)), 0.5)


def test_enlarged_grid_has_four_times_the_cells():
    spec = default_localization_spec()
    assert spec.output_shape(64, 64) == (16, 16)
    assert spec.output_shape(128, 128) == (32, 32)


def test_map_back_keeps_boxes():
    prop = Proposal(NormalizedBox(0.1, 0.2, 0.3, 0.4), 0.6, Provenance(cell=5))
    (mapped,) = map_back([prop])
    assert mapped.box == prop.box
    assert mapped.score == prop.score
    assert mapped.provenance == Provenance("enlarged", "initial", 5)
