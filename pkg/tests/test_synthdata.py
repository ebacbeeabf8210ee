import numpy as np
import pytest
import yaml
from proposal_toolkit.config.models import DatasetConfig
from proposal_toolkit.core.geometry import NormalizedBox
from proposal_toolkit.core.synthdata import (
    SyntheticScene, area_histogram, generate, generate_scene, instance_geometry, load_scenes, rasterize_shape,
    save_scenes,
)
from proposal_toolkit.utils.errors import DataError


def test_background_only_scene():
    scene = generate_scene(DatasetConfig(image_size=16, objects_per_scene=(0, 0), area_range=(4, 20)), 0)
    assert scene.boxes == {}
    assert not scene.mask.any()


def test_generation_is_reproducible(small_dataset):
    first, second = generate(small_dataset), generate(small_dataset, workers=3)
    for a, b in zip(first, second):
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.mask, b.mask)
        assert a.boxes == b.boxes


def test_different_seeds_differ(small_dataset):
    other = small_dataset.model_copy(update={"seed": small_dataset.seed + 1})
    assert not np.array_equal(generate(small_dataset)[0].image, generate(other)[0].image)


def test_rectangle_instance_area_and_box():
    footprint = rasterize_shape("rectangle", 10, 20)
    mask = np.zeros((64, 64), dtype=np.int64)
    mask[5:15, 10:30][footprint] = 1
    boxes, areas = instance_geometry(mask)
    assert areas == {1: 200}
    assert boxes[1] == NormalizedBox(10 / 64, 5 / 64, 30 / 64, 15 / 64)


def test_ellipse_footprint_is_inscribed():
    footprint = rasterize_shape("ellipse", 9, 15)
    assert footprint[4].all()
    assert not footprint[0, 0]
    assert footprint.sum() == pytest.approx(np.pi * 9 * 15 / 4, rel=0.15)


def test_scenes_are_consistent(small_scenes):
    for scene in small_scenes:
        boxes, areas = instance_geometry(scene.mask)
        assert boxes == scene.boxes
        assert areas == scene.areas
        assert scene.image.min() >= 0.0 and scene.image.max() <= 1.0
        assert np.array_equal(np.rint(scene.image * 255) / 255, scene.image)


def test_objects_do_not_overlap_by_default(small_dataset):
    dense = small_dataset.model_copy(update={"objects_per_scene": (4, 4)})
    for scene in generate(dense):
        assert sum(scene.areas.values()) == np.count_nonzero(scene.mask)


def test_histogram_single_object():
    mask = np.zeros((16, 16), dtype=np.int64)
    mask[:5, :5] = 1
    boxes, areas = instance_geometry(mask)
    scene = SyntheticScene(0, np.zeros((16, 16, 3)), mask, boxes, areas, seed=0)
    table = area_histogram([scene], [0, 16, 31, 64])
    assert list(table["objects"]) == [0, 1, 0]
    assert list(table["pixels"]) == [0, 25, 0]


def test_histogram_of_empty_dataset():
    table = area_histogram([], [0, 16, 31])
    assert list(table["objects"]) == [0, 0]
    assert list(table.columns) == ["area_lo", "area_hi", "objects", "pixels"]


def test_save_load_round_trip(tmp_path, small_dataset, small_scenes):
    directory = save_scenes(small_scenes, tmp_path / "train", small_dataset, "abc")
    header = (directory / "boxes.csv").read_text().splitlines()[0]
    assert header == "scene_id,instance_id,x_min,y_min,x_max,y_max,area"
    assert len((directory / "boxes.csv").read_text().splitlines()) == 1 + sum(len(s.boxes) for s in small_scenes)
    assert (directory / "images" / "scene_00000.ppm").read_bytes().startswith(b"P6\n16 16\n255\n")
    assert (directory / "masks" / "scene_00000.pgm").read_bytes().startswith(b"P5\n16 16\n65535\n")

    manifest = yaml.safe_load((directory / "manifest.yaml").read_text())
    assert manifest["command"] == "gen"
    assert "Philox" in manifest["prng"]

    loaded = load_scenes(directory)
    assert len(loaded) == len(small_scenes)
    for a, b in zip(small_scenes, loaded):
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.mask, b.mask)
        assert a.boxes == b.boxes
        assert a.seed == b.seed


def test_saving_twice_gives_identical_bytes(tmp_path, small_dataset, small_scenes):
    first = save_scenes(small_scenes, tmp_path / "a", small_dataset, "abc")
    second = save_scenes(generate(small_dataset), tmp_path / "b", small_dataset, "abc")
    for path in sorted(p for p in first.rglob("*") if p.is_file()):
        assert path.read_bytes() == (second / path.relative_to(first)).read_bytes()


def test_tampered_boxes_are_detected(tmp_path, small_dataset, small_scenes):
    directory = save_scenes(small_scenes, tmp_path / "train", small_dataset)
    lines = (directory / "boxes.csv").read_text().splitlines()
    fields = lines[1].split(",")
    fields[-1] = str(int(fields[-1]) + 1)
    lines[1] = ",".join(fields)
    (directory / "boxes.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError):
        load_scenes(directory)


def test_dataset_config_rejects_oversized_objects():
    with pytest.raises(ValueError):
        DatasetConfig(image_size=16, area_range=(4, 100))


@pytest.mark.slow
def test_small_objects_dominate_by_count_but_not_by_pixels():
    config = DatasetConfig(scene_count=1000, seed=11)
    threshold = config.resolved_area_threshold()
    table = area_histogram(generate(config, workers=4), [0, threshold + 1, 4096])
    small, large = table.itertuples(index=False)
    assert small.objects > large.objects
    assert large.pixels > small.pixels


def test_unreadable_image_is_a_data_error(tmp_path, small_dataset, small_scenes):
    directory = save_scenes(small_scenes, tmp_path / "train", small_dataset)
    (directory / "images" / "scene_00001.ppm").write_bytes(b"not an image")
    with pytest.raises(DataError):
        load_scenes(directory)
