"""Synthetic scenes with exact instance masks, boxes and areas."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union
import math
import numpy as np
import pandas as pd
from ..config.models import DatasetConfig
from ..utils.conversions import quantize_8bit, to_uint8, to_unit_interval
from ..utils.errors import ArtifactIOError, DataError
from ..utils.logging import get_logger
from ..utils.imagefiles import load_labels, load_rgb, save_labels, save_rgb
from ..utils.seeding import derive_seed, make_rng
from .geometry import NormalizedBox
from .provenance import hash_files, read_manifest, write_manifest

logger = get_logger("synthdata")

BOX_COLUMNS = ["scene_id", "instance_id", "x_min", "y_min", "x_max", "y_max", "area"]
HISTOGRAM_COLUMNS = ["area_lo", "area_hi", "objects", "pixels"]


@dataclass(frozen=True)
class SyntheticScene:
    scene_id: int
    image: np.ndarray
    mask: np.ndarray
    boxes: Dict[int, NormalizedBox]
    areas: Dict[int, int]
    seed: int
    skipped: int = 0

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]


def rasterize_shape(shape: str, height: int, width: int) -> np.ndarray:
    """Boolean footprint of a rectangle or inscribed ellipse in a height x width box."""
    if shape == "rectangle":
        return np.ones((height, width), dtype=bool)
    if shape == "ellipse":
        yy, xx = np.mgrid[0:height, 0:width]
        dy = (yy + 0.5 - height / 2.0) / (height / 2.0)
        dx = (xx + 0.5 - width / 2.0) / (width / 2.0)
        footprint = dx ** 2 + dy ** 2 <= 1.0
        if not footprint.any():
            footprint[height // 2, width // 2] = True
        return footprint
    raise ValueError(f"Unknown shape '{shape}'")


def instance_geometry(mask: np.ndarray) -> Tuple[Dict[int, NormalizedBox], Dict[int, int]]:
    """Tight normalized boxes and pixel areas of every nonzero id in the mask."""
    height, width = mask.shape
    boxes: Dict[int, NormalizedBox] = {}
    areas: Dict[int, int] = {}
    for instance_id in np.unique(mask):
        if instance_id == 0:
            continue
        rows, cols = np.nonzero(mask == instance_id)
        boxes[int(instance_id)] = NormalizedBox(
            cols.min() / width, rows.min() / height, (cols.max() + 1) / width, (rows.max() + 1) / height
        )
        areas[int(instance_id)] = int(rows.size)
    return boxes, areas


def _object_color(rng: np.random.Generator, config: DatasetConfig) -> np.ndarray:
    if config.palette is not None:
        return np.array(config.palette[rng.integers(len(config.palette))], dtype=np.float64)
    background = np.array(config.background_color)
    for _ in range(1000):
        color = rng.uniform(0.0, 1.0, size=3)
        if np.max(np.abs(color - background)) >= config.color_margin:
            return color
    return 1.0 - background


def _object_size(rng: np.random.Generator, config: DatasetConfig, shape: str) -> Tuple[int, int]:
    area = math.exp(rng.uniform(math.log(config.area_range[0]), math.log(config.area_range[1])))
    aspect = math.exp(rng.uniform(math.log(config.aspect_range[0]), math.log(config.aspect_range[1])))
    box_area = area * 4.0 / math.pi if shape == "ellipse" else area
    width = int(min(max(round(math.sqrt(box_area * aspect)), 1), config.image_size))
    height = int(min(max(round(math.sqrt(box_area / aspect)), 1), config.image_size))
    return height, width


def generate_scene(config: DatasetConfig, scene_id: int) -> SyntheticScene:
    seed = derive_seed(config.seed, "scene", scene_id)
    rng = make_rng(seed)
    size = config.image_size
    image = np.empty((size, size, 3), dtype=np.float64)
    image[:] = config.background_color
    mask = np.zeros((size, size), dtype=np.int64)

    lo, hi = config.objects_per_scene
    skipped = 0
    for instance_id in range(1, int(rng.integers(lo, hi + 1)) + 1):
        shape = config.shapes[int(rng.integers(len(config.shapes)))]
        height, width = _object_size(rng, config, shape)
        footprint = rasterize_shape(shape, height, width)
        color = _object_color(rng, config)
        for _ in range(config.max_retries):
            top = int(rng.integers(0, size - height + 1))
            left = int(rng.integers(0, size - width + 1))
            region = mask[top:top + height, left:left + width]
            if np.count_nonzero(region[footprint]) <= config.max_overlap:
                region[footprint] = instance_id
                image[top:top + height, left:left + width][footprint] = color
                break
        else:
            skipped += 1
            logger.warning(f"Scene {scene_id}: could not place object {instance_id} "
                           f"after {config.max_retries} attempts, skipping it")

    if config.noise_amplitude > 0:
        image = image + rng.normal(0.0, config.noise_amplitude, size=image.shape)
    image = quantize_8bit(np.clip(image, 0.0, 1.0))

    boxes, areas = instance_geometry(mask)
    return SyntheticScene(scene_id, image, mask, boxes, areas, seed, skipped)


def generate(config: DatasetConfig, workers: int = 1) -> List[SyntheticScene]:
    """Reproducible scenes; each scene draws from its own derived seed."""
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        scenes = list(pool.map(lambda i: generate_scene(config, i), range(config.scene_count)))
    logger.info(f"Generated {len(scenes)} scenes with "
                f"{sum(len(s.boxes) for s in scenes)} objects")
    return scenes


def area_histogram(scenes: Sequence[SyntheticScene], bin_edges: Sequence[float]) -> pd.DataFrame:
    """Object counts and covered pixel counts per area bin."""
    areas = np.array([a for scene in scenes for a in scene.areas.values()], dtype=np.float64)
    edges = np.asarray(bin_edges, dtype=np.float64)
    objects, _ = np.histogram(areas, bins=edges)
    pixels, _ = np.histogram(areas, bins=edges, weights=areas)
    return pd.DataFrame({
        "area_lo": edges[:-1],
        "area_hi": edges[1:],
        "objects": objects.astype(np.int64),
        "pixels": pixels.astype(np.int64),
    }, columns=HISTOGRAM_COLUMNS)


def _scene_stem(scene_id: int) -> str:
    return f"scene_{scene_id:05d}"


def boxes_frame(scenes: Sequence[SyntheticScene]) -> pd.DataFrame:
    rows = [
        {"scene_id": scene.scene_id, "instance_id": instance_id, **dict(zip(
            ("x_min", "y_min", "x_max", "y_max"), box.as_tuple())), "area": scene.areas[instance_id]}
        for scene in scenes for instance_id, box in sorted(scene.boxes.items())
    ]
    return pd.DataFrame(rows, columns=BOX_COLUMNS)


def save_scenes(scenes: Sequence[SyntheticScene], directory: Union[str, Path],
                config: DatasetConfig, config_hash: str = "",
                bin_edges: Sequence[float] = (0, 16, 31, 64, 128, 4096)) -> Path:
    """Write images (P6), masks (16-bit P5), boxes.csv, the area histogram and a manifest."""
    directory = Path(directory)
    try:
        (directory / "images").mkdir(parents=True, exist_ok=True)
        (directory / "masks").mkdir(parents=True, exist_ok=True)
        written: List[Path] = []
        for scene in scenes:
            image_path = directory / "images" / f"{_scene_stem(scene.scene_id)}.ppm"
            mask_path = directory / "masks" / f"{_scene_stem(scene.scene_id)}.pgm"
            save_rgb(image_path, to_uint8(scene.image))
            save_labels(mask_path, scene.mask)
            written += [image_path, mask_path]

        boxes_path = directory / "boxes.csv"
        boxes_frame(scenes).to_csv(boxes_path, index=False, float_format="%.6f", lineterminator="\n")
        histogram_path = directory / "area_histogram.csv"
        area_histogram(scenes, bin_edges).to_csv(
            histogram_path, index=False, float_format="%.6f", lineterminator="\n"
        )
        written += [boxes_path, histogram_path]
    except OSError as e:
        raise ArtifactIOError(f"Cannot write dataset to {directory}: {e}") from e

    write_manifest(
        directory / "manifest.yaml", "gen", config_hash,
        outputs=hash_files(directory, written),
        extra={
            "dataset": config.model_dump(mode="json"),
            "prng": "numpy Philox4x64 via SeedSequence",
            "scene_seeds": {int(s.scene_id): int(s.seed) for s in scenes},
            "skipped_objects": {int(s.scene_id): int(s.skipped) for s in scenes if s.skipped},
        },
    )
    logger.info(f"Saved {len(scenes)} scenes to {directory}")
    return directory


def load_scenes(directory: Union[str, Path]) -> List[SyntheticScene]:
    """Inverse of save_scenes; boxes are recomputed from masks and checked against boxes.csv."""
    directory = Path(directory)
    manifest = read_manifest(directory / "manifest.yaml")
    seeds = {int(k): int(v) for k, v in (manifest.get("scene_seeds") or {}).items()}
    skipped = {int(k): int(v) for k, v in (manifest.get("skipped_objects") or {}).items()}
    table = pd.read_csv(directory / "boxes.csv")

    scenes: List[SyntheticScene] = []
    for scene_id in sorted(seeds):
        stem = _scene_stem(scene_id)
        try:
            image = to_unit_interval(load_rgb(directory / "images" / f"{stem}.ppm"))
            mask = load_labels(directory / "masks" / f"{stem}.pgm")
        except (OSError, ValueError) as e:
            raise DataError(f"Cannot read scene {stem} in {directory}: {e}") from e
        boxes, areas = instance_geometry(mask)

        rows = table[table["scene_id"] == scene_id]
        if set(rows["instance_id"].astype(int)) != set(boxes):
            raise DataError(f"boxes.csv disagrees with the mask of {stem}")
        for row in rows.itertuples(index=False):
            box = boxes[int(row.instance_id)]
            listed = (row.x_min, row.y_min, row.x_max, row.y_max)
            if int(row.area) != areas[int(row.instance_id)] or \
                    max(abs(a - b) for a, b in zip(listed, box.as_tuple())) > 1e-6:
                raise DataError(f"boxes.csv row for {stem}/{row.instance_id} disagrees with its mask")
        scenes.append(SyntheticScene(scene_id, image, mask, boxes, areas, seeds[scene_id],
                                     skipped.get(scene_id, 0)))
    return scenes
