"""Scene images (PPM) and label maps (16-bit PGM) through Pillow."""
from pathlib import Path
from typing import Union
import numpy as np
from PIL import Image

PathLike = Union[str, Path]


def save_rgb(path: PathLike, image: np.ndarray) -> None:
    """Write an HxWx3 uint8 array; the format follows the suffix (.ppm for datasets)."""
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"RGB image needs an HxWx3 uint8 array, got {image.shape} {image.dtype}")
    Image.fromarray(np.ascontiguousarray(image)).save(path)


def save_labels(path: PathLike, labels: np.ndarray) -> None:
    """Write an HxW integer label map as a 16-bit grayscale image."""
    if labels.ndim != 2:
        raise ValueError(f"Label map needs a 2-D array, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() > 65535):
        raise ValueError("Label values must lie in [0, 65535]")
    Image.fromarray(np.ascontiguousarray(labels, dtype=np.uint16)).save(path)


def load_rgb(path: PathLike) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "RGB":
            raise ValueError(f"{path} is a {im.mode} image, expected RGB")
        return np.array(im, dtype=np.uint8)


def load_labels(path: PathLike) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im).astype(np.int64)
