from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union
import numpy as np
import pandas as pd
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402
from ..utils.errors import ArtifactIOError, DataError  # noqa: E402
from ..utils.logging import get_logger  # noqa: E402
from .geometry import NormalizedBox, Proposal, Provenance  # noqa: E402

logger = get_logger("outputs")

PROPOSAL_COLUMNS = ["image_id", "x_min", "y_min", "x_max", "y_max", "score"]
FLOAT_FORMAT = "%.6f"

PathLike = Union[str, Path]


def save_table(frame: pd.DataFrame, path: PathLike) -> Path:
    """Write a table as CSV with 6-decimal floats; the header is written even when empty."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as e:
        raise ArtifactIOError(f"Cannot write {path}: {e}") from e
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def proposals_frame(props_by_image: Mapping[int, Sequence[Proposal]]) -> pd.DataFrame:
    """One row per proposal, images in ascending id, proposals in the given rank order."""
    rows = [
        {"image_id": int(image_id), "x_min": p.box.x_min, "y_min": p.box.y_min,
         "x_max": p.box.x_max, "y_max": p.box.y_max, "score": p.score}
        for image_id in sorted(props_by_image)
        for p in props_by_image[image_id]
    ]
    return pd.DataFrame(rows, columns=PROPOSAL_COLUMNS)


def write_proposals_csv(props_by_image: Mapping[int, Sequence[Proposal]], path: PathLike) -> Path:
    path = save_table(proposals_frame(props_by_image), path)
    logger.info(f"Proposals for {len(props_by_image)} images saved to: {path}")
    return path


def read_proposals_csv(path: PathLike) -> Dict[int, List[Proposal]]:
    """Proposals per image in file order; the row's rank within its image becomes its cell."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Missing proposal file '{path}'; run infer first")
    try:
        frame = pd.read_csv(path)
    except (OSError, ValueError) as e:
        raise DataError(f"Cannot parse proposal file {path}: {e}") from e
    if list(frame.columns) != PROPOSAL_COLUMNS:
        raise DataError(f"{path} has columns {list(frame.columns)}, expected {PROPOSAL_COLUMNS}")

    props: Dict[int, List[Proposal]] = {}
    try:
        for row in frame.itertuples(index=False):
            image_props = props.setdefault(int(row.image_id), [])
            box = NormalizedBox(float(row.x_min), float(row.y_min), float(row.x_max), float(row.y_max))
            image_props.append(Proposal(box, float(row.score), Provenance(cell=len(image_props))))
    except ValueError as e:
        raise DataError(f"Invalid proposal row in {path}: {e}") from e
    return props


def save_loss_history(history: pd.DataFrame, path: PathLike) -> Path:
    return save_table(history, path)


def save_proposal_figure(image: np.ndarray, objectness: np.ndarray, proposals: Sequence[Proposal],
                         path: PathLike, title: Optional[str] = None, max_proposals: int = 10) -> Path:
    """Image with its top proposals next to the objectness map."""
    path = Path(path)
    height, width = image.shape[:2]

    fig, (ax_image, ax_map) = plt.subplots(1, 2, figsize=(8, 4))
    ax_image.imshow(np.clip(image, 0.0, 1.0), interpolation="nearest")
    for rank, prop in enumerate(proposals[:max_proposals]):
        x0, y0 = prop.box.x_min * width - 0.5, prop.box.y_min * height - 0.5
        ax_image.add_patch(Rectangle(
            (x0, y0), (prop.box.x_max - prop.box.x_min) * width, (prop.box.y_max - prop.box.y_min) * height,
            fill=False, linewidth=1.5 if rank == 0 else 0.8, edgecolor="yellow" if rank == 0 else "cyan",
        ))
    ax_image.set_title(f"Top {min(max_proposals, len(proposals))} proposals")
    ax_image.axis("off")

    shown = ax_map.imshow(objectness, vmin=0.0, vmax=1.0, cmap="viridis", interpolation="nearest")
    ax_map.set_title("Objectness")
    ax_map.axis("off")
    fig.colorbar(shown, ax=ax_map, fraction=0.046, pad=0.04)

    if title:
        fig.suptitle(title)
    fig.tight_layout()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=150, bbox_inches='tight')
    except OSError as e:
        raise ArtifactIOError(f"Cannot write figure {path}: {e}") from e
    finally:
        plt.close(fig)
    logger.debug(f"Figure saved to: {path}")
    return path
