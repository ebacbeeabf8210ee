"""Small fully-convolutional networks with hand-written backpropagation.

Parameters are named `trunk.<i>.weight|bias` and
`heads.<head>.<i>.weight|bias`; the name prefix selects the learning-rate
group. Everything runs in float64.
"""
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union
import numpy as np
from ..config.models import LayerSpec, NetworkSpec, TrainingSchedule
from ..utils.errors import ArtifactIOError, DataError, DivergenceError
from ..utils.logging import get_logger
from ..utils.seeding import make_rng
from .gridcodec import GridGeometry, PredictionGrid, make_coord_basis, offsets_to_absolute

logger = get_logger("convnet")

CHECKPOINT_MAGIC = "PROPKIT-CHECKPOINT 1"


@dataclass(frozen=True)
class ModelState:
    role: str
    spec_hash: str
    params: Dict[str, np.ndarray]
    seed: int
    epoch: int = 0
    version: int = 0

    @staticmethod
    def group_of(name: str) -> str:
        return "trunk" if name.startswith("trunk.") else "heads"

    def advance_epoch(self) -> "ModelState":
        return replace(self, epoch=self.epoch + 1)

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))


@dataclass
class _LayerCache:
    input_shape: Tuple[int, ...]
    cols: np.ndarray
    active: Optional[np.ndarray]


@dataclass
class ForwardCache:
    spec_hash: str
    state_version: int
    geometry: GridGeometry
    trunk: List[_LayerCache] = field(default_factory=list)
    heads: Dict[str, List[_LayerCache]] = field(default_factory=dict)
    softmax: Dict[str, np.ndarray] = field(default_factory=dict)
    trunk_output_shape: Tuple[int, ...] = ()


def iter_layers(spec: NetworkSpec) -> Iterator[Tuple[str, LayerSpec, int]]:
    """Yield (parameter prefix, layer, input channels) in declaration order."""
    channels = spec.input_channels
    for i, layer in enumerate(spec.trunk):
        yield f"trunk.{i}", layer, channels
        channels = layer.out_channels
    trunk_channels = channels
    for head_name, head in spec.heads.items():
        channels = trunk_channels
        for i, layer in enumerate(head.layers):
            yield f"heads.{head_name}.{i}", layer, channels
            channels = layer.out_channels


def init(spec: NetworkSpec, seed: int, role: str = "network", std: float = 0.01,
         scheme: str = "gaussian") -> ModelState:
    """Zero-mean Gaussian weights, zero biases, drawn in declaration order."""
    rng = make_rng(seed, "init")
    params: Dict[str, np.ndarray] = {}
    for prefix, layer, in_channels in iter_layers(spec):
        k = layer.kernel_size
        layer_std = std if scheme == "gaussian" else float(np.sqrt(2.0 / (in_channels * k * k)))
        params[f"{prefix}.weight"] = rng.normal(0.0, layer_std, size=(layer.out_channels, in_channels, k, k))
        params[f"{prefix}.bias"] = np.zeros(layer.out_channels, dtype=np.float64)
    return ModelState(role=role, spec_hash=spec.spec_hash(), params=params, seed=seed)


def _window(start: int, count: int, stride: int) -> slice:
    return slice(start, start + stride * (count - 1) + 1, stride)


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                   layer: LayerSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Dilated, strided convolution of NCHW input; returns output and im2col buffer."""
    n, c, h, w = x.shape
    if weight.shape[1] != c:
        raise ValueError(f"Layer expects {weight.shape[1]} input channels, got {c}")
    k, s, p, d = layer.kernel_size, layer.stride, layer.padding, layer.dilation
    ho, wo = layer.output_size(h), layer.output_size(w)
    if ho < 1 or wo < 1:
        raise ValueError(f"Input {h}x{w} is too small for layer {layer}")

    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((n, c, k, k, ho, wo), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, _window(i * d, ho, s), _window(j * d, wo, s)]
    out = np.einsum("ncijhw,ocij->nohw", cols, weight, optimize=True)
    return out + bias[None, :, None, None], cols


def conv2d_backward(dout: np.ndarray, cols: np.ndarray, weight: np.ndarray, layer: LayerSpec,
                    input_shape: Tuple[int, ...], need_input_grad: bool = True):
    """Gradients w.r.t. weight, bias and (optionally) the layer input."""
    d_weight = np.einsum("ncijhw,nohw->ocij", cols, dout, optimize=True)
    d_bias = dout.sum(axis=(0, 2, 3))
    if not need_input_grad:
        return d_weight, d_bias, None

    n, c, h, w = input_shape
    k, s, p, d = layer.kernel_size, layer.stride, layer.padding, layer.dilation
    ho, wo = dout.shape[2:]
    d_cols = np.einsum("nohw,ocij->ncijhw", dout, weight, optimize=True)
    dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            dxp[:, :, _window(i * d, ho, s), _window(j * d, wo, s)] += d_cols[:, :, i, j]
    return d_weight, d_bias, dxp[:, :, p:p + h, p:p + w]


def _check_state(state: ModelState, spec: NetworkSpec) -> None:
    if state.spec_hash != spec.spec_hash():
        raise ValueError(f"Model '{state.role}' was built for a different network spec")


def _as_batch(images: np.ndarray, channels: int) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4 or images.shape[-1] != channels:
        raise ValueError(f"Expected (N,)H,W,{channels} images, got shape {images.shape}")
    return np.ascontiguousarray(images.transpose(0, 3, 1, 2))


def _run_layers(x: np.ndarray, state: ModelState, prefix: str, layers: List[LayerSpec],
                caches: List[_LayerCache]) -> np.ndarray:
    for i, layer in enumerate(layers):
        name = f"{prefix}.{i}"
        out, cols = conv2d_forward(x, state.params[f"{name}.weight"], state.params[f"{name}.bias"], layer)
        active = None
        if layer.nonlinearity == "relu":
            active = out > 0
            out = out * active
        caches.append(_LayerCache(x.shape, cols, active))
        x = out
    return x


def forward(state: ModelState, spec: NetworkSpec,
            images: np.ndarray) -> Tuple[Dict[str, np.ndarray], ForwardCache]:
    """Run the network on HxWxC image(s).

    Localization nets return `coords` (N, Ho, Wo, 4) absolute boxes;
    confidence nets return `objectness` and `size`, each (N, Ho, Wo)
    positive-class probabilities.
    """
    _check_state(state, spec)
    x = _as_batch(images, spec.input_channels)
    height, width = x.shape[2:]
    ho, wo = spec.output_shape(height, width)
    geometry = GridGeometry(width, height, wo, ho)
    cache = ForwardCache(state.spec_hash, state.version, geometry)

    feats = _run_layers(x, state, "trunk", spec.trunk, cache.trunk)
    cache.trunk_output_shape = feats.shape

    outputs: Dict[str, np.ndarray] = {}
    for head_name, head in spec.heads.items():
        cache.heads[head_name] = []
        out = _run_layers(feats, state, f"heads.{head_name}", head.layers, cache.heads[head_name])
        if head.output == "offsets":
            basis = make_coord_basis(geometry)
            offsets = out.transpose(0, 2, 3, 1)
            outputs[head_name] = np.stack([
                offsets_to_absolute(PredictionGrid(geometry, grid, "offsets"), basis).values
                for grid in offsets
            ])
        else:
            shifted = out - out.max(axis=1, keepdims=True)
            exp = np.exp(shifted)
            probs = exp / exp.sum(axis=1, keepdims=True)
            cache.softmax[head_name] = probs
            outputs[head_name] = probs[:, 1]
    return outputs, cache


def _backprop_layers(grad: np.ndarray, state: ModelState, prefix: str, layers: List[LayerSpec],
                     caches: List[_LayerCache], grads: Dict[str, np.ndarray],
                     need_input_grad: bool = True) -> Optional[np.ndarray]:
    for i in reversed(range(len(layers))):
        name = f"{prefix}.{i}"
        layer_cache = caches[i]
        if layer_cache.active is not None:
            grad = grad * layer_cache.active
        d_w, d_b, grad = conv2d_backward(
            grad, layer_cache.cols, state.params[f"{name}.weight"], layers[i],
            layer_cache.input_shape, need_input_grad=need_input_grad or i > 0,
        )
        grads[f"{name}.weight"] += d_w
        grads[f"{name}.bias"] += d_b
    return grad


def backward(state: ModelState, spec: NetworkSpec, cache: ForwardCache,
             output_grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Parameter gradients given gradients w.r.t. the named forward outputs."""
    _check_state(state, spec)
    if cache.spec_hash != state.spec_hash or cache.state_version != state.version:
        raise ValueError(
            f"Stale forward cache for '{state.role}': cache is from version {cache.state_version}, "
            f"state is at version {state.version}"
        )
    grads = {name: np.zeros_like(value) for name, value in state.params.items()}
    d_feats = np.zeros(cache.trunk_output_shape, dtype=np.float64)

    for head_name, head in spec.heads.items():
        grad = output_grads.get(head_name)
        if grad is None:
            continue
        grad = np.asarray(grad, dtype=np.float64)
        if head.output == "offsets":
            # the coordinate basis is additive, so d(abs) = d(offsets)
            d_out = grad.transpose(0, 3, 1, 2)
        else:
            probs = cache.softmax[head_name]
            d_probs = np.zeros_like(probs)
            d_probs[:, 1] = grad
            d_out = probs * (d_probs - np.sum(d_probs * probs, axis=1, keepdims=True))
        d_feats += _backprop_layers(
            d_out, state, f"heads.{head_name}", head.layers, cache.heads[head_name], grads
        )

    _backprop_layers(d_feats, state, "trunk", spec.trunk, cache.trunk, grads, need_input_grad=False)
    return grads


def sgd_step(state: ModelState, gradients: Dict[str, np.ndarray],
             schedule: TrainingSchedule) -> ModelState:
    """Plain SGD with a per-group, step-decayed learning rate."""
    params: Dict[str, np.ndarray] = {}
    for name, value in state.params.items():
        grad = gradients[name]
        if grad.shape != value.shape:
            raise ValueError(f"Gradient for {name} has shape {grad.shape}, expected {value.shape}")
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"Non-finite gradient for {name} in '{state.role}' at epoch {state.epoch}")
        lr = schedule.effective_lr(ModelState.group_of(name), state.epoch)
        params[name] = value - lr * grad
    return replace(state, params=params, version=state.version + 1)


def save_checkpoint(state: ModelState, spec: NetworkSpec, path: Union[str, Path]) -> None:
    """Text header followed by little-endian float64 values in declaration order."""
    lines = [
        CHECKPOINT_MAGIC,
        f"name: {state.role}",
        f"kind: {spec.kind}",
        f"spec_hash: {state.spec_hash}",
        f"seed: {state.seed}",
        f"epoch: {state.epoch}",
    ]
    for name, value in state.params.items():
        lines.append(f"param: {name} {','.join(str(s) for s in value.shape)}")
    lines.append("end_header")
    try:
        with open(path, "wb") as f:
            f.write(("\n".join(lines) + "\n").encode("ascii"))
            for value in state.params.values():
                f.write(np.ascontiguousarray(value, dtype="<f8").tobytes())
    except OSError as e:
        raise ArtifactIOError(f"Cannot write checkpoint {path}: {e}") from e
    logger.debug(f"Saved checkpoint {path} ({state.parameter_count} parameters)")


def load_checkpoint(path: Union[str, Path], spec: NetworkSpec) -> ModelState:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise ArtifactIOError(f"Cannot read checkpoint {path}: {e}") from e

    marker = b"\nend_header\n"
    end = data.find(marker)
    if not data.startswith(CHECKPOINT_MAGIC.encode("ascii")) or end < 0:
        raise DataError(f"{path} is not a checkpoint file")
    header: Dict[str, str] = {}
    shapes: List[Tuple[str, Tuple[int, ...]]] = []
    for line in data[:end].decode("ascii").splitlines()[1:]:
        key, _, value = line.partition(": ")
        if key == "param":
            name, dims = value.split(" ")
            shapes.append((name, tuple(int(v) for v in dims.split(",") if v)))
        else:
            header[key] = value

    if header.get("spec_hash") != spec.spec_hash():
        raise DataError(
            f"Checkpoint {path} was trained for spec {header.get('spec_hash', '?')[:12]}..., "
            f"config has {spec.spec_hash()[:12]}..."
        )

    raw = np.frombuffer(data[end + len(marker):], dtype="<f8")
    params: Dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        if offset + size > raw.size:
            raise DataError(f"Checkpoint {path} is truncated at parameter {name}")
        params[name] = raw[offset:offset + size].reshape(shape).astype(np.float64)
        offset += size
    if offset != raw.size:
        raise DataError(f"Checkpoint {path} has {raw.size - offset} trailing values")

    expected = {f"{prefix}.{kind}" for prefix, _, _ in iter_layers(spec) for kind in ("weight", "bias")}
    if set(params) != expected:
        raise DataError(f"Checkpoint {path} parameters do not match the network spec")
    return ModelState(role=header["name"], spec_hash=header["spec_hash"], params=params,
                      seed=int(header["seed"]), epoch=int(header["epoch"]))
