from dataclasses import replace
import numpy as np
import pytest
from proposal_toolkit.config.models import (
    LayerSpec, LearningRates, TrainingSchedule, default_confidence_spec, default_localization_spec,
)
from proposal_toolkit.core.convnet import (
    backward, conv2d_forward, forward, init, load_checkpoint, save_checkpoint, sgd_step,
)
from proposal_toolkit.core.gridcodec import make_coord_basis
from proposal_toolkit.utils.errors import DataError, DivergenceError


def _zeroed(state):
    return replace(state, params={k: np.zeros_like(v) for k, v in state.params.items()})


def _objective(state, spec, images, weights):
    outputs, _ = forward(state, spec, images)
    return sum(float(np.sum(outputs[name] * weights[name])) for name in weights)


def _check_gradients(spec, seed):
    rng = np.random.default_rng(seed)
    images = rng.uniform(size=(2, 10, 10, 3))
    state = init(spec, seed, scheme="he")
    for name in state.params:
        if name.endswith(".bias"):
            state.params[name] = rng.normal(0.0, 0.1, size=state.params[name].shape)
    outputs, cache = forward(state, spec, images)
    weights = {name: rng.normal(size=value.shape) for name, value in outputs.items()}
    grads = backward(state, spec, cache, weights)

    eps = 1e-6
    for name, value in state.params.items():
        flat_indices = rng.choice(value.size, size=min(3, value.size), replace=False)
        for flat in flat_indices:
            index = np.unravel_index(flat, value.shape)
            up = {k: v.copy() for k, v in state.params.items()}
            down = {k: v.copy() for k, v in state.params.items()}
            up[name][index] += eps
            down[name][index] -= eps
            numeric = (_objective(replace(state, params=up), spec, images, weights)
                       - _objective(replace(state, params=down), spec, images, weights)) / (2 * eps)
            assert numeric == pytest.approx(grads[name][index], rel=1e-4, abs=1e-7), name


@pytest.mark.parametrize("seed", [5, 11, 17, 23, 29])
def test_localization_gradients_match_finite_differences(tiny_localization_spec, seed):
    _check_gradients(tiny_localization_spec, seed)


@pytest.mark.parametrize("seed", [6, 12, 18, 24, 30])
def test_confidence_gradients_match_finite_differences(tiny_confidence_spec, seed):
    _check_gradients(tiny_confidence_spec, seed)


def test_one_by_one_convolution_by_hand():
    x = np.arange(8, dtype=float).reshape(1, 2, 2, 2)
    weight = np.array([[[[2.0]], [[-1.0]]]])
    out, _ = conv2d_forward(x, weight, np.array([0.5]), LayerSpec(out_channels=1, kernel_size=1))
    np.testing.assert_allclose(out[0, 0], 2 * x[0, 0] - x[0, 1] + 0.5)


def test_dilated_convolution_output_size():
    x = np.ones((1, 1, 9, 9))
    layer = LayerSpec(out_channels=1, kernel_size=3, dilation=2)
    out, _ = conv2d_forward(x, np.ones((1, 1, 3, 3)), np.zeros(1), layer)
    assert out.shape == (1, 1, 5, 5)
    np.testing.assert_allclose(out, 9.0)


def test_zero_localization_net_predicts_cell_centers():
    spec = default_localization_spec()
    state = _zeroed(init(spec, 0))
    outputs, cache = forward(state, spec, np.random.default_rng(0).uniform(size=(64, 64, 3)))
    assert cache.geometry.shape == (16, 16)
    np.testing.assert_allclose(outputs["coords"][0], make_coord_basis(cache.geometry).stacked())


def test_zero_confidence_net_is_uniform():
    spec = default_confidence_spec()
    state = _zeroed(init(spec, 0))
    outputs, _ = forward(state, spec, np.zeros((32, 32, 3)))
    np.testing.assert_allclose(outputs["objectness"], 0.5)
    np.testing.assert_allclose(outputs["size"], 0.5)


def test_forward_is_deterministic(tiny_confidence_spec):
    images = np.random.default_rng(3).uniform(size=(12, 12, 3))
    first, _ = forward(init(tiny_confidence_spec, 11), tiny_confidence_spec, images)
    second, _ = forward(init(tiny_confidence_spec, 11), tiny_confidence_spec, images)
    for name in first:
        assert np.array_equal(first[name], second[name])


def test_fully_convolutional_translation_consistency(tiny_localization_spec):
    spec = tiny_localization_spec
    state = init(spec, 2, scheme="he")
    rng = np.random.default_rng(9)
    image = rng.uniform(size=(24, 24, 3))
    shifted = np.zeros_like(image)
    shifted[:, 4:] = image[:, :-4]
    _, cache = forward(state, spec, image)
    _, shifted_cache = forward(state, spec, shifted)
    trunk_out = cache.heads["coords"][0].cols[0, :, 0, 0]
    shifted_out = shifted_cache.heads["coords"][0].cols[0, :, 0, 0]
    # stride 2 overall: a 4-pixel shift moves interior features by 2 cells
    np.testing.assert_allclose(shifted_out[:, 4:-4, 6:-2], trunk_out[:, 4:-4, 4:-4])


def test_zero_output_gradient_gives_zero_parameter_gradients(tiny_localization_spec):
    spec = tiny_localization_spec
    state = init(spec, 0)
    outputs, cache = forward(state, spec, np.ones((8, 8, 3)))
    grads = backward(state, spec, cache, {"coords": np.zeros_like(outputs["coords"])})
    assert all(not g.any() for g in grads.values())


def test_stale_cache_is_rejected(tiny_localization_spec):
    spec = tiny_localization_spec
    state = init(spec, 0)
    outputs, cache = forward(state, spec, np.ones((8, 8, 3)))
    zero = {k: np.zeros_like(v) for k, v in state.params.items()}
    newer = sgd_step(state, zero, TrainingSchedule())
    with pytest.raises(ValueError):
        backward(newer, spec, cache, {"coords": np.ones_like(outputs["coords"])})


def test_sgd_step_updates_and_keeps_state(tiny_localization_spec):
    spec = tiny_localization_spec
    state = init(spec, 0)
    schedule = TrainingSchedule(learning_rates=LearningRates(trunk=0.01, heads=0.02))
    zero = {k: np.zeros_like(v) for k, v in state.params.items()}
    unchanged = sgd_step(state, zero, schedule)
    for name in state.params:
        assert np.array_equal(unchanged.params[name], state.params[name])

    ones = {k: np.ones_like(v) for k, v in state.params.items()}
    stepped = sgd_step(state, ones, schedule)
    for name, value in state.params.items():
        lr = 0.01 if name.startswith("trunk.") else 0.02
        np.testing.assert_allclose(stepped.params[name], value - lr)
    assert stepped.version == state.version + 1


def test_sgd_step_non_finite_gradient_is_divergence(tiny_localization_spec):
    state = init(tiny_localization_spec, 0)
    grads = {k: np.zeros_like(v) for k, v in state.params.items()}
    grads["trunk.0.weight"][0, 0, 0, 0] = np.inf
    with pytest.raises(DivergenceError):
        sgd_step(state, grads, TrainingSchedule())


@pytest.mark.parametrize("epoch, expected", [(0, 0.01), (19, 0.01), (20, 0.001), (45, 0.0001)])
def test_learning_rate_decay(epoch, expected):
    assert TrainingSchedule().effective_lr("trunk", epoch) == pytest.approx(expected)


def test_init_statistics_and_reproducibility():
    spec = default_localization_spec()
    state = init(spec, 42, std=0.01)
    weights = state.params["trunk.3.weight"]
    assert abs(weights.mean()) < 1e-3
    assert weights.std() == pytest.approx(0.01, rel=0.05)
    assert all(not state.params[name].any() for name in state.params if name.endswith(".bias"))
    again = init(spec, 42, std=0.01)
    assert all(np.array_equal(state.params[k], again.params[k]) for k in state.params)
    other = init(spec, 43, std=0.01)
    assert not np.array_equal(other.params["trunk.0.weight"], state.params["trunk.0.weight"])


def test_checkpoint_round_trip(tmp_path, tiny_confidence_spec):
    state = init(tiny_confidence_spec, 7, role="confidence").advance_epoch()
    path = tmp_path / "confidence.ckpt"
    save_checkpoint(state, tiny_confidence_spec, path)
    assert path.read_bytes().startswith(b"PROPKIT-CHECKPOINT 1\n")
    loaded = load_checkpoint(path, tiny_confidence_spec)
    assert loaded.role == "confidence"
    assert loaded.epoch == 1
    assert loaded.seed == 7
    assert list(loaded.params) == list(state.params)
    assert all(np.array_equal(loaded.params[k], state.params[k]) for k in state.params)


def test_checkpoint_spec_mismatch(tmp_path, tiny_localization_spec):
    path = tmp_path / "large.ckpt"
    save_checkpoint(init(tiny_localization_spec, 0), tiny_localization_spec, path)
    with pytest.raises(DataError):
        load_checkpoint(path, default_localization_spec())


def test_truncated_checkpoint(tmp_path, tiny_localization_spec):
    path = tmp_path / "large.ckpt"
    save_checkpoint(init(tiny_localization_spec, 0), tiny_localization_spec, path)
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(DataError):
        load_checkpoint(path, tiny_localization_spec)
