from typing import Dict, List, Literal, Optional, Tuple
import hashlib
import json
from pydantic import BaseModel, Field, model_validator
from ..utils.conversions import default_area_threshold

NetworkRole = Literal["large", "small", "confidence", "all"]


class LayerSpec(BaseModel):
    out_channels: int = Field(..., gt=0, description="Number of output feature maps")
    kernel_size: int = Field(3, gt=0, description="Square kernel size")
    stride: int = Field(1, gt=0, description="Convolution stride")
    padding: int = Field(0, ge=0, description="Zero-padding on every side")
    dilation: int = Field(1, gt=0, description="Spacing between kernel taps (hole size)")
    nonlinearity: Literal["relu", "none"] = Field("relu", description="Activation after the convolution")

    def output_size(self, size: int) -> int:
        return (size + 2 * self.padding - self.dilation * (self.kernel_size - 1) - 1) // self.stride + 1


class HeadSpec(BaseModel):
    layers: List[LayerSpec] = Field(..., min_length=1, description="Head layers after the trunk")
    output: Literal["offsets", "softmax"] = Field(..., description="How the last layer is interpreted")

    @model_validator(mode='after')
    def validate_output_layer(self) -> 'HeadSpec':
        last = self.layers[-1]
        expected = 4 if self.output == "offsets" else 2
        if last.out_channels != expected or last.nonlinearity != "none":
            raise ValueError(
                f"A '{self.output}' head must end in a linear layer with {expected} channels, "
                f"got {last.out_channels} channels with '{last.nonlinearity}'"
            )
        return self


class NetworkSpec(BaseModel):
    kind: Literal["localization", "confidence"] = Field(..., description="Network family")
    input_channels: int = Field(3, gt=0, description="Image channels")
    trunk: List[LayerSpec] = Field(..., min_length=1, description="Shared convolution stack")
    heads: Dict[str, HeadSpec] = Field(..., description="Named branches reading the trunk output")

    @model_validator(mode='after')
    def validate_heads(self) -> 'NetworkSpec':
        expected = {"localization": {"coords"}, "confidence": {"objectness", "size"}}[self.kind]
        if set(self.heads) != expected:
            raise ValueError(
                f"A {self.kind} network needs heads {sorted(expected)}, got {sorted(self.heads)}"
            )
        return self

    def spec_hash(self) -> str:
        canonical = json.dumps(self.model_dump(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def output_shape(self, height: int, width: int) -> Tuple[int, int]:
        """Spatial size of every head output for an input of the given size."""
        layers = list(self.trunk) + list(next(iter(self.heads.values())).layers)
        for layer in layers:
            height, width = layer.output_size(height), layer.output_size(width)
        if height < 1 or width < 1:
            raise ValueError("Input is too small for this network")
        return height, width


def _trunk() -> List[LayerSpec]:
    return [
        LayerSpec(out_channels=16, kernel_size=3, stride=2, padding=1),
        LayerSpec(out_channels=32, kernel_size=3, stride=2, padding=1),
        LayerSpec(out_channels=32, kernel_size=3, stride=1, padding=1),
        LayerSpec(out_channels=64, kernel_size=3, stride=1, padding=2, dilation=2),
    ]


def default_localization_spec() -> NetworkSpec:
    return NetworkSpec(
        kind="localization",
        trunk=_trunk(),
        heads={"coords": HeadSpec(
            layers=[LayerSpec(out_channels=4, kernel_size=1, nonlinearity="none")],
            output="offsets",
        )},
    )


def default_confidence_spec() -> NetworkSpec:
    def branch() -> HeadSpec:
        return HeadSpec(
            layers=[
                LayerSpec(out_channels=32, kernel_size=3, padding=1),
                LayerSpec(out_channels=2, kernel_size=1, nonlinearity="none"),
            ],
            output="softmax",
        )

    return NetworkSpec(kind="confidence", trunk=_trunk(), heads={"objectness": branch(), "size": branch()})


class NetworksConfig(BaseModel):
    localization: NetworkSpec = Field(default_factory=default_localization_spec)
    confidence: NetworkSpec = Field(default_factory=default_confidence_spec)

    def for_role(self, role: NetworkRole) -> NetworkSpec:
        return self.confidence if role == "confidence" else self.localization

    @model_validator(mode='after')
    def validate_kinds(self) -> 'NetworksConfig':
        if self.localization.kind != "localization" or self.confidence.kind != "confidence":
            raise ValueError("networks.localization and networks.confidence have swapped kinds")
        return self


class LearningRates(BaseModel):
    trunk: float = Field(0.01, gt=0, description="Learning rate of trunk layers")
    heads: float = Field(0.01, gt=0, description="Learning rate of head layers")


class TrainingSchedule(BaseModel):
    epochs: int = Field(60, ge=0, description="Passes over the training split")
    batch_size: int = Field(8, gt=0, description="Images per SGD step")
    learning_rates: LearningRates = Field(default_factory=LearningRates)
    decay_epochs: int = Field(20, gt=0, description="Epochs between learning-rate decays")
    decay_factor: float = Field(0.1, gt=0, le=1, description="Multiplier applied at each decay")
    init_std: float = Field(0.01, gt=0, description="Std of the zero-mean Gaussian weight init")
    init_scheme: Literal["gaussian", "he"] = Field("gaussian", description="Fixed std or fan-in scaled")
    networks: List[NetworkRole] = Field(
        default_factory=lambda: ["large", "small", "confidence"], description="Roles to train"
    )
    balance_samples: int = Field(100, gt=0, description="Size-branch cells kept per large object")

    def effective_lr(self, group: str, epoch: int) -> float:
        base = getattr(self.learning_rates, group)
        return base * self.decay_factor ** (epoch // self.decay_epochs)


class DatasetConfig(BaseModel):
    image_size: int = Field(64, ge=8, description="Square image side in pixels")
    scene_count: int = Field(200, ge=0, description="Scenes to generate")
    objects_per_scene: Tuple[int, int] = Field((1, 5), description="Inclusive object count range")
    shapes: List[Literal["rectangle", "ellipse"]] = Field(
        default_factory=lambda: ["rectangle", "ellipse"], min_length=1
    )
    area_range: Tuple[float, float] = Field((6.0, 110.0), description="Log-uniform object area range (px)")
    aspect_range: Tuple[float, float] = Field((0.5, 2.0), description="Width/height ratio range")
    background_color: Tuple[float, float, float] = Field((0.1, 0.1, 0.1))
    palette: Optional[List[Tuple[float, float, float]]] = Field(
        None, description="Object colors; random colors when omitted"
    )
    color_margin: float = Field(0.3, ge=0, le=1, description="Min channel distance from background")
    noise_amplitude: float = Field(0.02, ge=0, description="Std of per-pixel Gaussian noise")
    max_overlap: int = Field(0, ge=0, description="Allowed mask pixels shared between objects")
    max_retries: int = Field(100, gt=0, description="Placement attempts per object")
    area_threshold: Optional[int] = Field(None, gt=0, description="Large/small split in pixels")
    seed: int = Field(0, ge=0, description="Generator seed")

    @model_validator(mode='after')
    def validate_ranges(self) -> 'DatasetConfig':
        lo, hi = self.objects_per_scene
        if not 0 <= lo <= hi:
            raise ValueError(f"objects_per_scene must satisfy 0 <= min <= max, got {self.objects_per_scene}")
        a_lo, a_hi = self.area_range
        if not 1 <= a_lo <= a_hi:
            raise ValueError(f"area_range must satisfy 1 <= min <= max, got {self.area_range}")
        if a_hi > (self.image_size // 2) ** 2:
            raise ValueError(f"image_size {self.image_size} is too small for objects of area {a_hi}")
        r_lo, r_hi = self.aspect_range
        if not 0 < r_lo <= r_hi:
            raise ValueError(f"aspect_range must satisfy 0 < min <= max, got {self.aspect_range}")
        if self.palette is not None and not self.palette:
            raise ValueError("palette must not be empty when given")
        return self

    def resolved_area_threshold(self) -> int:
        if self.area_threshold is not None:
            return self.area_threshold
        return default_area_threshold(self.image_size, self.image_size)


class SlicConfig(BaseModel):
    segments: Optional[int] = Field(None, gt=0, description="Target superpixel count; N/64 when omitted")
    compactness: float = Field(10.0, gt=0, description="Weight of the spatial distance term")
    iterations: int = Field(10, gt=0, description="Assignment/update rounds")

    def segments_for(self, pixel_count: int) -> int:
        return self.segments if self.segments is not None else max(1, pixel_count // 64)


class PipelineConfig(BaseModel):
    nms_threshold: float = Field(0.8, gt=0, le=1, description="IoU above which proposals are suppressed")
    enlargement_factor: float = Field(2.0, ge=1, description="Upsampling factor of the second scale")
    top_k: int = Field(2000, gt=0, description="Initial proposals kept per scale before refinement")
    refinement: bool = Field(True, description="Add superpixel shrunk/expanded variants")
    objectness_floor: float = Field(0.0, ge=0, le=1, description="Drop final proposals scored below")
    scale_aware: bool = Field(True, description="Fuse large/small localizers; otherwise use the 'all' net")
    multi_scale: bool = Field(True, description="Also run on the enlarged image")


class EvaluationConfig(BaseModel):
    n_values: List[int] = Field(default_factory=lambda: [1, 10, 50, 100, 200, 500, 1000, 2000])
    iou_thresholds: List[float] = Field(
        default_factory=lambda: [round(0.5 + 0.05 * i, 2) for i in range(10)]
    )
    area_bins: List[float] = Field(default_factory=lambda: [0, 16, 31, 64, 128, 4096])
    abo_n: int = Field(1000, gt=0, description="Proposal budget for per-area ABO")

    @model_validator(mode='after')
    def validate_grids(self) -> 'EvaluationConfig':
        if any(n < 1 for n in self.n_values):
            raise ValueError("n_values must be positive")
        if any(not 0 < t <= 1 for t in self.iou_thresholds):
            raise ValueError("iou_thresholds must lie in (0, 1]")
        if sorted(self.area_bins) != self.area_bins or len(self.area_bins) < 2:
            raise ValueError("area_bins must be at least two ascending edges")
        return self


class OutputsConfig(BaseModel):
    figures: bool = Field(False, description="Render objectness/proposal figures during infer")
    figure_count: int = Field(4, ge=0, description="Scenes rendered per split")
    figure_proposals: int = Field(10, ge=1, description="Top proposals drawn per figure")


class Metadata(BaseModel):
    name: str = Field(..., description="Run name")
    description: str = Field("", description="Run description")
    version: str = Field("1.0.0", description="Version")


class RunConfig(BaseModel):
    metadata: Metadata = Field(..., description="Run metadata")
    seed: int = Field(..., ge=0, description="Global seed; every derived seed comes from it")
    output_dir: str = Field("results", description="Root directory of all artifacts")
    workers: int = Field(1, ge=1, description="Parallel workers")
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    splits: Dict[str, int] = Field(default_factory=lambda: {"train": 800, "test": 200})
    networks: NetworksConfig = Field(default_factory=NetworksConfig)
    training: TrainingSchedule = Field(default_factory=TrainingSchedule)
    superpixels: SlicConfig = Field(default_factory=SlicConfig)
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    outputs: OutputsConfig = Field(default_factory=OutputsConfig)

    @model_validator(mode='after')
    def validate_splits(self) -> 'RunConfig':
        missing = {"train", "test"} - set(self.splits)
        if missing:
            raise ValueError(f"splits must define {sorted(missing)}")
        if any(count < 0 for count in self.splits.values()):
            raise ValueError("split sizes must be non-negative")
        return self

    def config_hash(self) -> str:
        # workers and output_dir never change artifact contents
        payload = self.model_dump(mode="json", exclude={"workers", "output_dir"})
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def dataset_for_split(self, split: str) -> DatasetConfig:
        index = sorted(self.splits).index(split)
        return self.dataset.model_copy(
            update={"scene_count": self.splits[split], "seed": self.seed * 1000 + index}
        )
