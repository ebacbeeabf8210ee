from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple
import numpy as np
import pandas as pd
from .config.loader import load_run_config
from .config.models import NetworkRole, PipelineConfig, RunConfig
from .config.validator import validate_run_config
from .core.convnet import ModelState, forward, load_checkpoint, save_checkpoint
from .core.evalkit import GroundTruth, LOC_ERROR_COLUMNS, abo, abo_by_area, average_recall, emit_report, \
    evaluate, localization_errors, recall_at
from .core.gridcodec import GridGeometry
from .core.outputs import read_proposals_csv, save_loss_history, save_proposal_figure, save_table
from .core.pipeline import ModelBundle, ProposalPipeline, infer_batch
from .core.provenance import hash_files, read_manifest, verify_outputs, write_manifest
from .core.synthdata import SyntheticScene, generate, load_scenes, save_scenes
from .core.training import build_targets, train
from .utils.errors import ToolkitError
from .utils.logging import attach_log_file, get_logger, setup_logging

ABLATION_VARIANTS = {
    "single_scale": dict(scale_aware=False, multi_scale=False, refinement=False),
    "+scale_aware": dict(scale_aware=True, multi_scale=False, refinement=False),
    "+multi_scale": dict(scale_aware=True, multi_scale=True, refinement=False),
    "+refinement": dict(scale_aware=True, multi_scale=True, refinement=True),
}
ABLATION_COLUMNS = ["variant", "n", "metric", "value"]
BLOCK_COLUMNS = ["block", "area_lo", "area_hi", "abo"]

logger = get_logger("main")


def pipeline_for_variant(config: PipelineConfig, variant: str) -> PipelineConfig:
    return config.model_copy(update=ABLATION_VARIANTS[variant])


def _manifest_path(out: Path, command: str) -> Path:
    return out / f"{command}_manifest.yaml"


def _split_dir(out: Path, split: str) -> Path:
    return out / "dataset" / split


def _verify_prefix(out: Path, command: str, prefix: str) -> Dict[str, str]:
    """Re-hash every artifact of an upstream command whose path starts with prefix."""
    manifest_path = _manifest_path(out, command)
    recorded = read_manifest(manifest_path).get("outputs", {})
    names = [name for name in recorded if name.startswith(prefix)]
    return verify_outputs(manifest_path, out, names)


def _load_split(out: Path, split: str) -> Tuple[List[SyntheticScene], Dict[str, str]]:
    inputs = _verify_prefix(out, "gen", f"dataset/{split}/")
    return load_scenes(_split_dir(out, split)), inputs


def _ground_truths(scenes: Sequence[SyntheticScene]) -> List[GroundTruth]:
    return [
        GroundTruth(scene.scene_id, box, scene.areas[instance_id])
        for scene in scenes for instance_id, box in sorted(scene.boxes.items())
    ]


def _checkpoint_name(role: str) -> str:
    return f"models/{role}.ckpt"


def _load_models(config: RunConfig, out: Path,
                 roles: Iterable[NetworkRole]) -> Tuple[Dict[str, ModelState], Dict[str, str]]:
    names = {role: _checkpoint_name(role) for role in roles}
    verified = verify_outputs(_manifest_path(out, "train"), out, names.values())
    states = {role: load_checkpoint(out / name, config.networks.for_role(role)) for role, name in names.items()}
    return states, verified


def _bundle(config: RunConfig, states: Mapping[str, ModelState]) -> ModelBundle:
    return ModelBundle(
        localization_spec=config.networks.localization,
        confidence_spec=config.networks.confidence,
        confidence=states["confidence"],
        large=states.get("large"),
        small=states.get("small"),
        single=states.get("all"),
    )


def _execute(command: str, config_file: str, overrides: Iterable[str], log_level: str,
             body: Callable[[RunConfig, Path], None]) -> int:
    """Load the configuration, run one command and map failures to exit codes."""
    setup_logging(log_level)
    try:
        logger.info(f"Loading run configuration from: {config_file}")
        config = load_run_config(config_file, overrides)
        logger.info(f"Loaded run: {config.metadata.name} (seed {config.seed})")
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        attach_log_file(out / "logs" / f"{command}.log", log_level)
        body(config, out)
        logger.info(f"{command} completed; artifacts in {out}")
        return 0
    except ToolkitError as e:
        logger.error(f"{command} failed: {e}")
        return e.exit_code


def run_gen(config_file: str, overrides: Iterable[str] = (), log_level: str = "INFO") -> int:
    """Generate every dataset split."""

    def body(config: RunConfig, out: Path) -> None:
        written: List[Path] = []
        for split in sorted(config.splits):
            dataset = config.dataset_for_split(split)
            scenes = generate(dataset, config.workers)
            directory = save_scenes(scenes, _split_dir(out, split), dataset, config.config_hash(),
                                    config.evaluation.area_bins)
            written += sorted(p for p in directory.rglob("*") if p.is_file())
            logger.info(f"Split '{split}': {len(scenes)} scenes written to {directory}")
        write_manifest(_manifest_path(out, "gen"), "gen", config.config_hash(),
                       outputs=hash_files(out, written), extra={"seed": config.seed})

    return _execute("gen", config_file, overrides, log_level, body)


def run_train(config_file: str, overrides: Iterable[str] = (), log_level: str = "INFO") -> int:
    """Train the configured networks on the train split."""

    def body(config: RunConfig, out: Path) -> None:
        scenes, inputs = _load_split(out, "train")
        specs = {role: config.networks.for_role(role) for role in config.training.networks}
        result = train(specs, scenes, config.training, config.dataset.resolved_area_threshold(),
                       config.seed, config.workers)

        written = []
        (out / "models").mkdir(parents=True, exist_ok=True)
        for role, state in result.states.items():
            path = out / _checkpoint_name(role)
            save_checkpoint(state, specs[role], path)
            written.append(path)
        written.append(save_loss_history(result.history, out / "models" / "loss_history.csv"))
        write_manifest(_manifest_path(out, "train"), "train", config.config_hash(),
                       inputs=inputs, outputs=hash_files(out, written),
                       extra={"seed": config.seed,
                              "spec_hashes": {role: spec.spec_hash() for role, spec in specs.items()}})

    return _execute("train", config_file, overrides, log_level, body)


def _save_figures(pipeline: ProposalPipeline, scenes: Sequence[SyntheticScene],
                  props_by_image: Mapping[int, Sequence], directory: Path, config: RunConfig) -> None:
    for scene in scenes[:config.outputs.figure_count]:
        p = pipeline.run_scale(scene.image, "original").fused.p
        save_proposal_figure(scene.image, p, props_by_image[scene.scene_id],
                             directory / f"scene_{scene.scene_id:05d}.png",
                             title=f"Scene {scene.scene_id}",
                             max_proposals=config.outputs.figure_proposals)


def run_infer(config_file: str, overrides: Iterable[str] = (), log_level: str = "INFO") -> int:
    """Write ranked proposals for every split."""

    def body(config: RunConfig, out: Path) -> None:
        roles = ["large", "small", "confidence"] if config.pipeline.scale_aware else ["all", "confidence"]
        states, inputs = _load_models(config, out, roles)
        models = _bundle(config, states)

        written = []
        for split in sorted(config.splits):
            scenes, split_inputs = _load_split(out, split)
            inputs.update(split_inputs)
            path = out / "proposals" / f"{split}.csv"
            props = infer_batch(scenes, models, config.pipeline, config.superpixels, config.workers, path)
            written.append(path)
            logger.info(f"Split '{split}': {sum(len(v) for v in props.values())} proposals "
                        f"for {len(scenes)} images")
            if config.outputs.figures:
                pipeline = ProposalPipeline(models, config.pipeline, config.superpixels)
                _save_figures(pipeline, scenes, props, out / "figures" / split, config)

        write_manifest(_manifest_path(out, "infer"), "infer", config.config_hash(),
                       inputs=inputs, outputs=hash_files(out, written), extra={"seed": config.seed})

    return _execute("infer", config_file, overrides, log_level, body)


def run_eval(config_file: str, overrides: Iterable[str] = (), log_level: str = "INFO",
             split: str = "test") -> int:
    """Score the proposals of one split against its ground truth."""

    def body(config: RunConfig, out: Path) -> None:
        scenes, inputs = _load_split(out, split)
        inputs.update(_verify_prefix(out, "infer", f"proposals/{split}.csv"))
        props = read_proposals_csv(out / "proposals" / f"{split}.csv")
        ev = config.evaluation
        report = evaluate(_ground_truths(scenes), props, ev.n_values, ev.iou_thresholds,
                          ev.area_bins, ev.abo_n)
        paths = emit_report(report, out / "report")
        for n, row in report.ar.set_index("n")["ar"].items():
            logger.info(f"AR@{n}: {row:.4f}")
        write_manifest(_manifest_path(out, "eval"), "eval", config.config_hash(),
                       inputs=inputs, outputs=hash_files(out, paths.values()), extra={"split": split})

    return _execute("eval", config_file, overrides, log_level, body)


def _ablation_rows(variant: str, gts: Sequence[GroundTruth], props, n_values: Sequence[int],
                   area_threshold: int) -> List[dict]:
    small = [gt for gt in gts if gt.area <= area_threshold]
    large = [gt for gt in gts if gt.area > area_threshold]
    rows = []
    for n in n_values:
        metrics = {
            "recall_0.5": recall_at(gts, props, 0.5, n),
            "recall_0.7": recall_at(gts, props, 0.7, n),
            "ar": average_recall(gts, props, n),
            "abo": abo(gts, props, n),
            "abo_small": abo(small, props, n),
            "abo_large": abo(large, props, n),
        }
        rows += [{"variant": variant, "n": n, "metric": name, "value": value} for name, value in metrics.items()]
    return rows


def _block_table(pipeline: ProposalPipeline, scenes: Sequence[SyntheticScene], gts: Sequence[GroundTruth],
                 n: int, bin_edges: Sequence[float]) -> pd.DataFrame:
    per_block: Dict[str, Dict[int, list]] = {}
    for scene in scenes:
        for block, props in pipeline.infer_blocks(scene.image).items():
            per_block.setdefault(block, {})[scene.scene_id] = props
    frames = []
    for block in sorted(per_block):
        table = abo_by_area(gts, per_block[block], n, bin_edges)
        table.insert(0, "block", block)
        frames.append(table)
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=BLOCK_COLUMNS)


def _localization_table(config: RunConfig, states: Mapping[str, ModelState],
                        scenes: Sequence[SyntheticScene], area_threshold: int) -> pd.DataFrame:
    spec = config.networks.localization
    images = np.stack([scene.image for scene in scenes])
    height, width = images.shape[1:3]
    ho, wo = spec.output_shape(height, width)
    targets = build_targets(scenes, GridGeometry(width, height, wo, ho), area_threshold, config.seed,
                            config.training.balance_samples)
    frames = []
    for role in ("large", "small", "all"):
        if role not in states:
            continue
        coords = forward(states[role], spec, images)[0]["coords"]
        table = localization_errors(list(coords), targets, [scene.areas for scene in scenes], area_threshold)
        table.insert(0, "network", role)
        frames.append(table)
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["network"] + LOC_ERROR_COLUMNS)


def run_ablate(config_file: str, overrides: Iterable[str] = (), log_level: str = "INFO",
               split: str = "test") -> int:
    """Accumulatively add scale awareness, the enlarged scale and refinement."""

    def body(config: RunConfig, out: Path) -> None:
        area_threshold = config.dataset.resolved_area_threshold()
        scenes, inputs = _load_split(out, split)
        states, model_inputs = _load_models(config, out, ["large", "small", "confidence"])
        inputs.update(model_inputs)
        written: List[Path] = []

        recorded = read_manifest(_manifest_path(out, "train")).get("outputs", {})
        if _checkpoint_name("all") in recorded:
            single, single_inputs = _load_models(config, out, ["all"])
            states.update(single)
            inputs.update(single_inputs)
        else:
            logger.warning("No single localizer among the trained models; training the 'all' network now")
            train_scenes, train_inputs = _load_split(out, "train")
            inputs.update(train_inputs)
            spec = config.networks.localization
            result = train({"all": spec}, train_scenes, config.training, area_threshold, config.seed)
            states["all"] = result.states["all"]
            (out / "ablation").mkdir(parents=True, exist_ok=True)
            path = out / "ablation" / "all.ckpt"
            save_checkpoint(states["all"], spec, path)
            written += [path, save_loss_history(result.history, out / "ablation" / "all_loss_history.csv")]

        models = _bundle(config, states)
        gts = _ground_truths(scenes)
        rows: List[dict] = []
        full_pipeline: Optional[ProposalPipeline] = None
        for variant in ABLATION_VARIANTS:
            pipeline_config = pipeline_for_variant(config.pipeline, variant)
            props = infer_batch(scenes, models, pipeline_config, config.superpixels, config.workers)
            rows += _ablation_rows(variant, gts, props, config.evaluation.n_values, area_threshold)
            logger.info(f"Variant {variant}: ABO@{config.evaluation.abo_n} = "
                        f"{abo(gts, props, config.evaluation.abo_n):.4f}")
            if pipeline_config.scale_aware:
                full_pipeline = ProposalPipeline(models, pipeline_config, config.superpixels)

        directory = out / "ablation"
        written.append(save_table(pd.DataFrame(rows, columns=ABLATION_COLUMNS), directory / "ablation.csv"))
        written.append(save_table(
            _block_table(full_pipeline, scenes, gts, config.evaluation.abo_n, config.evaluation.area_bins),
            directory / "blocks.csv",
        ))
        written.append(save_table(_localization_table(config, states, scenes, area_threshold),
                                  directory / "loc_errors.csv"))
        write_manifest(_manifest_path(out, "ablate"), "ablate", config.config_hash(),
                       inputs=inputs, outputs=hash_files(out, written), extra={"split": split})

    return _execute("ablate", config_file, overrides, log_level, body)


def validate_run(config_file: str, overrides: Iterable[str] = (), log_level: str = "INFO") -> int:
    """Validate a run configuration."""

    setup_logging(log_level)
    logger.info(f"Validating configuration: {config_file}")
    validation_results = validate_run_config(config_file, overrides)

    all_valid = True
    for error_type, errors in validation_results.items():
        if errors:
            all_valid = False
            logger.error(f"{error_type}:")
            for error in errors:
                logger.error(f"  - {error}")
    if not all_valid:
        return 2

    config = load_run_config(config_file, overrides)
    logger.info("Configuration is valid!")
    logger.info(f"Successfully loaded: {config.metadata.name}")
    logger.info(f"Splits: {dict(sorted(config.splits.items()))}")
    logger.info(f"Networks to train: {config.training.networks}")
    logger.info(f"Area threshold: {config.dataset.resolved_area_threshold()} px")
    logger.info(f"Config hash: {config.config_hash()}")
    return 0
