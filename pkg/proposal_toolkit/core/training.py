from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple
import numpy as np
import pandas as pd
from ..config.models import NetworkRole, NetworkSpec, TrainingSchedule
from ..utils.errors import DataError, DivergenceError
from ..utils.logging import get_logger
from ..utils.seeding import derive_seed, make_rng
from .convnet import ModelState, backward, forward, init, sgd_step
from .gridcodec import GridGeometry, TargetBundle, targets_from_instances
from .losses import confidence_loss, loc_loss
from .synthdata import SyntheticScene

logger = get_logger("training")

HISTORY_COLUMNS = ["network", "epoch", "loss", "lr_trunk", "lr_heads"]


@dataclass(frozen=True)
class TrainingResult:
    states: Dict[str, ModelState]
    history: pd.DataFrame


def build_targets(scenes: Sequence[SyntheticScene], geometry: GridGeometry, area_threshold: int,
                  seed: int, balance_samples: int = 100) -> List[TargetBundle]:
    """Per-scene targets; balancing draws use a seed derived from the scene's own seed."""
    return [
        targets_from_instances(
            scene.mask, scene.boxes, scene.areas, geometry, area_threshold,
            rng=make_rng(seed, "balance", scene.seed), balance_samples=balance_samples,
        )
        for scene in scenes
    ]


def batch_loss(role: NetworkRole, outputs: Dict[str, np.ndarray],
               targets: Sequence[TargetBundle]) -> Tuple[float, Dict[str, np.ndarray]]:
    """Summed loss of one batch and its gradients w.r.t. the network outputs."""
    if role == "confidence":
        result = confidence_loss(
            outputs["objectness"], outputs["size"],
            np.stack([t.fg_mask for t in targets]),
            np.stack([t.size_mask for t in targets]),
            np.stack([t.sample_weights for t in targets]),
        )
        return result.value, {"objectness": result.grad_p, "size": result.grad_z}

    masks = {
        "large": [t.large_mask for t in targets],
        "small": [t.small_mask for t in targets],
        "all": [t.fg_mask for t in targets],
    }[role]
    result = loc_loss(
        outputs["coords"], np.stack([t.coord_targets.values for t in targets]), np.stack(masks)
    )
    return result.value, {"coords": result.gradient}


def train_network(role: NetworkRole, spec: NetworkSpec, images: np.ndarray,
                  targets: Sequence[TargetBundle], schedule: TrainingSchedule,
                  seed: int) -> Tuple[ModelState, List[dict]]:
    """Mini-batch SGD on one network; gradients are averaged over the batch."""
    state = init(spec, derive_seed(seed, role), role=role, std=schedule.init_std,
                 scheme=schedule.init_scheme)
    rng = make_rng(seed, role, "shuffle")
    history: List[dict] = []

    for epoch in range(schedule.epochs):
        order = rng.permutation(len(images))
        epoch_loss = 0.0
        for start in range(0, len(order), schedule.batch_size):
            index = order[start:start + schedule.batch_size]
            outputs, cache = forward(state, spec, images[index])
            value, output_grads = batch_loss(role, outputs, [targets[i] for i in index])
            if not np.isfinite(value):
                raise DivergenceError(f"Training of '{role}' diverged at epoch {epoch + 1}")
            grads = backward(state, spec, cache, output_grads)
            scale = 1.0 / len(index)
            state = sgd_step(state, {k: g * scale for k, g in grads.items()}, schedule)
            epoch_loss += value

        history.append({
            "network": role,
            "epoch": epoch + 1,
            "loss": epoch_loss / len(images),
            "lr_trunk": schedule.effective_lr("trunk", state.epoch),
            "lr_heads": schedule.effective_lr("heads", state.epoch),
        })
        state = state.advance_epoch()
        logger.info(f"[{role}] epoch {epoch + 1}/{schedule.epochs} loss/image {history[-1]['loss']:.6f}")

    return state, history


def train(specs: Mapping[NetworkRole, NetworkSpec], scenes: Sequence[SyntheticScene],
          schedule: TrainingSchedule, area_threshold: int, seed: int,
          workers: int = 1) -> TrainingResult:
    """Train each role independently (large, small, confidence and optionally all)."""
    if not scenes:
        raise DataError("Cannot train on an empty dataset")
    unknown = set(specs) - {"large", "small", "confidence", "all"}
    if unknown:
        raise ValueError(f"Unknown network roles {sorted(unknown)}")

    images = np.stack([scene.image for scene in scenes])
    height, width = images.shape[1:3]
    targets_by_shape: Dict[Tuple[int, int], List[TargetBundle]] = {}
    for spec in specs.values():
        ho, wo = spec.output_shape(height, width)
        if (ho, wo) not in targets_by_shape:
            targets_by_shape[(ho, wo)] = build_targets(
                scenes, GridGeometry(width, height, wo, ho), area_threshold, seed,
                schedule.balance_samples,
            )

    def run(role: NetworkRole) -> Tuple[ModelState, List[dict]]:
        spec = specs[role]
        logger.info(f"Training '{role}' ({spec.kind}) on {len(scenes)} scenes for {schedule.epochs} epochs")
        return train_network(role, spec, images, targets_by_shape[spec.output_shape(height, width)],
                             schedule, seed)

    roles = list(specs)
    with ThreadPoolExecutor(max_workers=max(1, min(workers, len(roles)))) as pool:
        results = list(pool.map(run, roles))

    states = {role: state for role, (state, _) in zip(roles, results)}
    rows = [row for _, history in results for row in history]
    return TrainingResult(states, pd.DataFrame(rows, columns=HISTORY_COLUMNS))
