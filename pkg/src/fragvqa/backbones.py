"""Deep-feature extractors behind one small abstraction.

Three kinds are supported: ``toy_conv`` (a seeded 3-stage strided conv net
declared in the package config directory, so the whole pipeline is testable
offline), ``conv_stages`` (an ONNX model tapped at named stage outputs), and
``patch_transformer`` (an ONNX model exposing token embeddings). Pooling
helpers turn tapped activations into fixed-length vectors.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import BackboneSpecError, ConfigError, LoadError, ShapeError
from .fragments import Fragment
from .media import Frame

# Input normalization applied to every extractor input (intensities scaled
# to [0,1] first). Shared by fragments and resized frames.
INPUT_MEAN = (0.485, 0.456, 0.406)
INPUT_STD = (0.229, 0.224, 0.225)

KIND_CONV_STAGES = "conv_stages"
KIND_PATCH_TRANSFORMER = "patch_transformer"
KIND_TOY_CONV = "toy_conv"


@dataclass(eq=False)
class FeatureMap:
    """One tapped activation volume, (channels, height, width)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ShapeError(f"feature map must be (c, h, w), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("feature map contains non-finite values")

    @property
    def channels(self) -> int:
        return self.values.shape[0]


@dataclass(eq=False)
class PatchEmbeddings:
    """Token embeddings with the class-token row already dropped, (N, D)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ShapeError(f"embeddings must be (n>=1, d), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("embeddings contain non-finite values")

    @property
    def num_patches(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class BackboneSpec:
    """Declared taps and sizes for one extractor."""

    kind: str
    stage_names: tuple[str, ...] = ()
    stage_channels: tuple[int, ...] = ()
    embedding_dim: int = 0
    weights_source: str | None = None
    cls_row: int | None = 0  # patch_transformer: token row to drop, None keeps all
    input_size: int = 224

    def __post_init__(self):
        if self.kind not in (KIND_CONV_STAGES, KIND_PATCH_TRANSFORMER, KIND_TOY_CONV):
            raise ConfigError(f"unknown backbone kind {self.kind!r}")
        if self.kind == KIND_PATCH_TRANSFORMER and self.embedding_dim < 1:
            raise ConfigError("patch_transformer spec needs embedding_dim >= 1")

    def spec_hash(self) -> str:
        payload = json.dumps(
            {
                "kind": self.kind,
                "stage_names": list(self.stage_names),
                "stage_channels": list(self.stage_channels),
                "embedding_dim": self.embedding_dim,
                "weights_source": self.weights_source,
                "cls_row": self.cls_row,
                "input_size": self.input_size,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def stack_length(self) -> int:
        return int(sum(self.stage_channels))

    def conv_pool_length(self) -> int:
        return int(self.stage_channels[-1]) + 3 if self.stage_channels else 0

    def patch_pool_length(self) -> int:
        return 3 * self.embedding_dim


def resnet50_spec(weights: str | None = None, stage_names: tuple[str, ...] = ()) -> BackboneSpec:
    """Declared stage widths of the standard 50-layer residual network
    (stem conv plus four residual stages)."""
    return BackboneSpec(
        kind=KIND_CONV_STAGES,
        stage_names=stage_names or ("stem", "stage1", "stage2", "stage3", "stage4"),
        stage_channels=(64, 256, 512, 1024, 2048),
        weights_source=weights,
    )


def vit_b16_spec(weights: str | None = None, tokens_name: str = "tokens") -> BackboneSpec:
    """Declared embedding width of the base 16-pixel-patch transformer."""
    return BackboneSpec(
        kind=KIND_PATCH_TRANSFORMER,
        stage_names=(tokens_name,),
        embedding_dim=768,
        weights_source=weights,
        cls_row=0,
    )


def _image_array(image: Fragment | Frame) -> Frame:
    return image.image if isinstance(image, Fragment) else image


def preprocess_input(frame: Frame) -> np.ndarray:
    """Scale to [0,1] and normalize per channel; returns (3, h, w) float64."""
    if frame.channels != 3:
        raise ShapeError("extractor input must be 3-channel")
    x = frame.data.astype(np.float64) / frame.peak
    mean = np.asarray(INPUT_MEAN).reshape(1, 1, 3)
    std = np.asarray(INPUT_STD).reshape(1, 1, 3)
    return np.moveaxis((x - mean) / std, 2, 0)


# ---------------------------------------------------------------------------
# Toy convolutional extractor
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToyConvConfig:
    seed: int = 1234
    stage_channels: tuple[int, ...] = (4, 8, 16)
    kernel: int = 3
    stride: int = 2
    activation: str = "relu"  # relu | identity
    zero_bias: bool = True


def load_toy_config(path: str | Path | None = None) -> ToyConvConfig:
    """Read the toy architecture declaration (packaged default when no path)."""
    parser = configparser.ConfigParser()
    if path is None:
        text = resources.files("fragvqa.configs").joinpath("toy_backbone.ini").read_text()
    else:
        text = Path(path).read_text()
    parser.read_string(text)
    sec = parser["toy_backbone"]
    return ToyConvConfig(
        seed=sec.getint("seed"),
        stage_channels=tuple(int(v) for v in sec.get("stage_channels").split(",")),
        kernel=sec.getint("kernel"),
        stride=sec.getint("stride"),
        activation=sec.get("activation"),
        zero_bias=sec.getboolean("zero_bias"),
    )


def toy_spec(config: ToyConvConfig | None = None) -> BackboneSpec:
    cfg = config or load_toy_config()
    return BackboneSpec(
        kind=KIND_TOY_CONV,
        stage_names=tuple(f"stage{i + 1}" for i in range(len(cfg.stage_channels))),
        stage_channels=cfg.stage_channels,
        weights_source=f"builtin-seed:{cfg.seed}",
    )


def _conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int) -> np.ndarray:
    """Strided 2-D convolution, (c_in,h,w) -> (c_out,h',w'), pad 1 ring per
    kernel half-width."""
    c_out, c_in, k, _ = weight.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    windows = windows[:, ::stride, ::stride, :, :]
    out = np.einsum("cijuv,ocuv->oij", windows, weight, optimize=True)
    return out + bias[:, np.newaxis, np.newaxis]


class ToyConvExtractor:
    """Seeded strided-conv stack; deterministic for a fixed config."""

    kind = KIND_TOY_CONV

    def __init__(self, config: ToyConvConfig | None = None):
        self.config = config or load_toy_config()
        if self.config.activation not in ("relu", "identity"):
            raise ConfigError(f"unknown activation {self.config.activation!r}")
        rng = np.random.default_rng(self.config.seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        c_in = 3
        k = self.config.kernel
        for c_out in self.config.stage_channels:
            bound = 1.0 / np.sqrt(c_in * k * k)
            self.weights.append(rng.uniform(-bound, bound, size=(c_out, c_in, k, k)))
            if self.config.zero_bias:
                self.biases.append(np.zeros(c_out))
            else:
                self.biases.append(rng.uniform(-bound, bound, size=c_out))
            c_in = c_out
        self.spec = toy_spec(self.config)

    def stage_maps_from_array(self, x: np.ndarray) -> list[FeatureMap]:
        """Run the conv stack on an already-preprocessed (3, h, w) tensor."""
        maps = []
        for w, b in zip(self.weights, self.biases):
            x = _conv2d(x, w, b, self.config.stride)
            if self.config.activation == "relu":
                x = np.maximum(x, 0.0)
            maps.append(FeatureMap(x))
        return maps

    def extract_stage_maps(self, image: Fragment | Frame) -> list[FeatureMap]:
        return self.stage_maps_from_array(preprocess_input(_image_array(image)))


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------


def channel_means(feature_map: FeatureMap) -> np.ndarray:
    """Spatial mean per channel."""
    return feature_map.values.mean(axis=(1, 2))


def layer_stack_features(maps: list[FeatureMap]) -> np.ndarray:
    """Concatenate per-channel spatial means of every tapped stage, in
    network order; length is the sum of stage channel counts."""
    if not maps:
        raise ShapeError("need at least one feature map")
    return np.concatenate([channel_means(m) for m in maps])


def global_pool_conv(avg_pool_vec: np.ndarray) -> np.ndarray:
    """Append mean, max, and population standard deviation of the vector."""
    vec = np.asarray(avg_pool_vec, dtype=np.float64)
    if vec.ndim != 1 or vec.size == 0:
        raise ShapeError("expected a non-empty 1-D vector")
    stats = np.array([vec.mean(), vec.max(), vec.std()])
    return np.concatenate([vec, stats])


def patch_embedding_pool(emb: PatchEmbeddings) -> np.ndarray:
    """Per-dimension mean/max/population-std over the patch axis, length 3D."""
    v = emb.values
    return np.concatenate([v.mean(axis=0), v.max(axis=0), v.std(axis=0)])


# ---------------------------------------------------------------------------
# ONNX interchange extractors (optional dependency)
# ---------------------------------------------------------------------------


def _onnx_session(path: str, tap_names: tuple[str, ...]):
    try:
        import onnx
        import onnxruntime
    except ImportError as exc:
        raise LoadError(
            "loading interchange models requires the optional onnx extra "
            "(pip install fragvqa[onnx])"
        ) from exc
    try:
        model = onnx.load(path)
    except Exception as exc:
        raise LoadError(f"cannot read model file {path}: {exc}") from exc
    available = {out for node in model.graph.node for out in node.output}
    available.update(o.name for o in model.graph.output)
    existing = {o.name for o in model.graph.output}
    for name in tap_names:
        if name not in available:
            raise BackboneSpecError(f"model has no tensor named {name!r}")
        if name not in existing:
            info = onnx.helper.make_empty_tensor_value_info(name)
            model.graph.output.append(info)
    opts = onnxruntime.SessionOptions()
    opts.intra_op_num_threads = 1
    opts.inter_op_num_threads = 1
    return onnxruntime.InferenceSession(model.SerializeToString(), sess_options=opts)


class OnnxStageExtractor:
    """Conv backbone tapped at declared stage tensor names."""

    kind = KIND_CONV_STAGES

    def __init__(self, spec: BackboneSpec):
        if not spec.weights_source:
            raise LoadError("conv_stages spec has no weights_source")
        if not Path(spec.weights_source).exists():
            raise LoadError(f"weights file not found: {spec.weights_source}")
        self.spec = spec
        self._session = _onnx_session(spec.weights_source, spec.stage_names)
        self._input_name = self._session.get_inputs()[0].name

    def extract_stage_maps(self, image: Fragment | Frame) -> list[FeatureMap]:
        x = preprocess_input(_image_array(image))[np.newaxis].astype(np.float32)
        outputs = self._session.run(list(self.spec.stage_names), {self._input_name: x})
        maps = []
        for name, declared, out in zip(self.spec.stage_names, self.spec.stage_channels, outputs):
            arr = np.asarray(out)
            if arr.ndim == 4 and arr.shape[0] == 1:
                arr = arr[0]
            if arr.ndim == 2:  # pooled (1, C) taps are 1x1 maps
                arr = arr.reshape(arr.shape[1], 1, 1)
            if arr.ndim != 3 or arr.shape[0] != declared:
                raise BackboneSpecError(
                    f"tap {name!r} produced shape {arr.shape}, declared {declared} channels"
                )
            maps.append(FeatureMap(arr))
        return maps


class OnnxPatchExtractor:
    """Transformer backbone exposing a (1, tokens, dim) tensor."""

    kind = KIND_PATCH_TRANSFORMER

    def __init__(self, spec: BackboneSpec):
        if not spec.weights_source:
            raise LoadError("patch_transformer spec has no weights_source")
        if not Path(spec.weights_source).exists():
            raise LoadError(f"weights file not found: {spec.weights_source}")
        if len(spec.stage_names) != 1:
            raise ConfigError("patch_transformer spec declares exactly one tokens tensor")
        self.spec = spec
        self._session = _onnx_session(spec.weights_source, spec.stage_names)
        self._input_name = self._session.get_inputs()[0].name

    def extract_patch_embeddings(self, image: Fragment | Frame) -> PatchEmbeddings:
        x = preprocess_input(_image_array(image))[np.newaxis].astype(np.float32)
        (out,) = self._session.run(list(self.spec.stage_names), {self._input_name: x})
        arr = np.asarray(out)
        if arr.ndim == 3 and arr.shape[0] == 1:
            arr = arr[0]
        if arr.ndim != 2 or arr.shape[1] != self.spec.embedding_dim:
            raise BackboneSpecError(
                f"tokens tensor has shape {arr.shape}, declared dim {self.spec.embedding_dim}"
            )
        if self.spec.cls_row is not None:
            arr = np.delete(arr, self.spec.cls_row, axis=0)
        return PatchEmbeddings(arr)


def load_backbone(spec: BackboneSpec):
    """Instantiate the extractor declared by ``spec``."""
    if spec.kind == KIND_TOY_CONV:
        src = spec.weights_source
        if src and not src.startswith("builtin-seed:"):
            return ToyConvExtractor(load_toy_config(src))
        return ToyConvExtractor()
    if spec.kind == KIND_CONV_STAGES:
        return OnnxStageExtractor(spec)
    if spec.kind == KIND_PATCH_TRANSFORMER:
        return OnnxPatchExtractor(spec)
    raise ConfigError(f"unknown backbone kind {spec.kind!r}")
