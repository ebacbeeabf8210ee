from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union
import numpy as np
from ..config.models import NetworkSpec, PipelineConfig, SlicConfig
from ..utils.logging import get_logger
from .convnet import ModelState, forward
from .geometry import NormalizedBox, Proposal, Provenance, Scale, clip_array, nms, top_k
from .gridcodec import GridGeometry, PredictionGrid
from .outputs import write_proposals_csv
from .scalefusion import FusedGrid, enlarge_image, fuse_scale, map_back
from .superpix import SuperpixelMap, refine, slic
from .synthdata import SyntheticScene

logger = get_logger("pipeline")


@dataclass(frozen=True)
class ModelBundle:
    """Trained networks plus the specs they were built from."""
    localization_spec: NetworkSpec
    confidence_spec: NetworkSpec
    confidence: ModelState
    large: Optional[ModelState] = None
    small: Optional[ModelState] = None
    single: Optional[ModelState] = None

    def check(self, config: PipelineConfig) -> None:
        needed = {"confidence": self.confidence}
        if config.scale_aware:
            needed.update(large=self.large, small=self.small)
        else:
            needed["all"] = self.single
        missing = sorted(role for role, state in needed.items() if state is None)
        if missing:
            raise ValueError(f"Pipeline needs trained networks for roles {missing}")
        for role, state in needed.items():
            spec = self.confidence_spec if role == "confidence" else self.localization_spec
            if state.spec_hash != spec.spec_hash():
                raise ValueError(f"Model '{role}' does not match the configured network spec")


@dataclass(frozen=True)
class ScaleMaps:
    scale: Scale
    geometry: GridGeometry
    fused: FusedGrid
    t_l: Optional[PredictionGrid] = None
    t_s: Optional[PredictionGrid] = None


def grid_proposals(grid: PredictionGrid, p: np.ndarray, scale: Scale = "original") -> List[Proposal]:
    """One initial proposal per cell, scored by that cell's objectness."""
    boxes = grid.values.reshape(-1, 4)
    scores = np.clip(np.asarray(p, dtype=np.float64).reshape(-1), 0.0, 1.0)
    props = [
        Proposal(NormalizedBox(*map(float, box)), float(score), Provenance(cell=cell))
        for cell, (box, score) in enumerate(zip(boxes, scores))
    ]
    return map_back(props) if scale == "enlarged" else props


class ProposalPipeline:
    """Runs confidence and localization nets at one or two scales, then ranks and suppresses."""

    def __init__(self, models: ModelBundle, config: PipelineConfig,
                 slic_config: Optional[SlicConfig] = None):
        models.check(config)
        self.models = models
        self.config = config
        self.slic_config = slic_config or SlicConfig()

    def scales(self) -> List[Scale]:
        return ["original", "enlarged"] if self.config.multi_scale else ["original"]

    def scale_image(self, image: np.ndarray, scale: Scale) -> np.ndarray:
        if scale == "original":
            return image
        return enlarge_image(image, self.config.enlargement_factor)

    def run_scale(self, image: np.ndarray, scale: Scale) -> ScaleMaps:
        """Forward passes at one scale; each scale uses its own p and z maps."""
        scaled = self.scale_image(image, scale)
        models = self.models
        conf, cache = forward(models.confidence, models.confidence_spec, scaled)
        p, z = conf["objectness"][0], conf["size"][0]
        geometry = cache.geometry

        if self.config.scale_aware:
            t_l = PredictionGrid(geometry, forward(models.large, models.localization_spec, scaled)[0]["coords"][0])
            t_s = PredictionGrid(geometry, forward(models.small, models.localization_spec, scaled)[0]["coords"][0])
            return ScaleMaps(scale, geometry, fuse_scale(t_l, t_s, p, z), t_l, t_s)

        coords = forward(models.single, models.localization_spec, scaled)[0]["coords"][0]
        single = PredictionGrid(geometry, clip_array(coords))
        return ScaleMaps(scale, geometry, FusedGrid(single, z, p))

    def superpixels(self, image: np.ndarray) -> SuperpixelMap:
        height, width = image.shape[:2]
        cfg = self.slic_config
        return slic(image, cfg.segments_for(height * width), cfg.compactness, cfg.iterations)

    def candidates(self, image: np.ndarray) -> List[Proposal]:
        """Pre-NMS pool: top-K initial proposals per scale plus their refined variants."""
        sp = self.superpixels(image) if self.config.refinement else None
        pool: List[Proposal] = []
        for scale in self.scales():
            maps = self.run_scale(image, scale)
            kept = top_k(grid_proposals(maps.fused.fused, maps.fused.p, scale), self.config.top_k)
            pool.extend(kept)
            if sp is not None:
                for prop in kept:
                    pool.extend(refine(prop, sp))
        return pool

    def infer(self, image: np.ndarray) -> List[Proposal]:
        pool = self.candidates(image)
        survivors = nms(pool, self.config.nms_threshold)
        return [prop for prop in survivors if prop.score >= self.config.objectness_floor]

    def infer_blocks(self, image: np.ndarray) -> Dict[str, List[Proposal]]:
        """Unrefined proposals of each localizer and of the fusion, per scale."""
        if not self.config.scale_aware:
            raise ValueError("Building-block analysis needs the scale-aware networks")
        blocks: Dict[str, List[Proposal]] = {}
        for scale in ("original", "enlarged"):
            maps = self.run_scale(image, scale)
            p = maps.fused.p
            for name, grid in (("large", PredictionGrid(maps.geometry, clip_array(maps.t_l.values))),
                               ("small", PredictionGrid(maps.geometry, clip_array(maps.t_s.values))),
                               ("fused", maps.fused.fused)):
                props = top_k(grid_proposals(grid, p, scale), self.config.top_k)
                blocks[f"{name}@{scale}"] = nms(props, self.config.nms_threshold)
        return blocks


def infer(image: np.ndarray, models: ModelBundle, config: PipelineConfig,
          slic_config: Optional[SlicConfig] = None) -> List[Proposal]:
    return ProposalPipeline(models, config, slic_config).infer(image)


def infer_blocks(image: np.ndarray, models: ModelBundle, config: PipelineConfig) -> Dict[str, List[Proposal]]:
    return ProposalPipeline(models, config).infer_blocks(image)


def infer_batch(scenes: Sequence[SyntheticScene], models: ModelBundle, config: PipelineConfig,
                slic_config: Optional[SlicConfig] = None, workers: int = 1,
                path: Optional[Union[str, Path]] = None) -> Dict[int, List[Proposal]]:
    """Proposals per scene id; results do not depend on the worker count."""
    pipeline = ProposalPipeline(models, config, slic_config)

    def run(scene: SyntheticScene) -> List[Proposal]:
        props = pipeline.infer(scene.image)
        logger.debug(f"Scene {scene.scene_id}: {len(props)} proposals")
        return props

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(run, scenes))
    props_by_image = {scene.scene_id: props for scene, props in zip(scenes, results)}

    if path is not None:
        write_proposals_csv(props_by_image, path)
    return props_by_image
