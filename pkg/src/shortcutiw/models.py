"""Model specifications, presets, Glorot initialization, and checkpoints.

A model is an ordered list of layer descriptions validated against a declared
input shape.  Two presets matter in practice: the single linear-conv
low-capacity network, and a VGG-style high-capacity family ("vgg-mini" for
desk-scale work, "vgg11" for full-scale runs).
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import autograd as ag
from .autograd import Tensor

ACTIVATIONS = ("linear", "relu")


class ModelSpecError(ValueError):
    """Layer list does not compose into a valid model."""


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel_size: int = 3
    padding: int = 1
    stride: int = 1
    activation: str = "relu"


@dataclass(frozen=True)
class MaxPool:
    size: int = 2
    stride: int = 2


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Affine:
    out_units: int
    activation: str = "relu"


@dataclass(frozen=True)
class SoftmaxHead:
    num_classes: int


Layer = Union[Conv, MaxPool, Flatten, Affine, SoftmaxHead]

_LAYER_KINDS = {
    "conv": Conv,
    "maxpool": MaxPool,
    "flatten": Flatten,
    "affine": Affine,
    "softmax_head": SoftmaxHead,
}


@dataclass(frozen=True)
class ModelSpec:
    """Input shape (C, H, W) plus an ordered, validated layer list."""

    input_shape: tuple[int, int, int]
    layers: tuple[Layer, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self._walk_shapes()

    @property
    def num_classes(self) -> int:
        return self.layers[-1].num_classes

    def _walk_shapes(self):
        heads = [i for i, l in enumerate(self.layers) if isinstance(l, SoftmaxHead)]
        if len(heads) != 1 or heads[0] != len(self.layers) - 1:
            raise ModelSpecError("model needs exactly one softmax_head, as the last layer")
        if self.layers[-1].num_classes < 2:
            raise ModelSpecError("softmax_head needs at least 2 classes")

        shape = self.input_shape  # (C, H, W) until flattened, then (D,)
        for i, layer in enumerate(self.layers):
            if isinstance(layer, (Conv, MaxPool)) and len(shape) != 3:
                raise ModelSpecError(f"layer {i}: {layer} applied after flatten")
            if isinstance(layer, (Affine, SoftmaxHead)) and len(shape) != 1:
                raise ModelSpecError(f"layer {i}: {layer} needs flattened input, have {shape}")
            if isinstance(layer, Conv):
                if layer.activation not in ACTIVATIONS:
                    raise ModelSpecError(f"layer {i}: unknown activation {layer.activation!r}")
                c, h, w = shape
                k, p, s = layer.kernel_size, layer.padding, layer.stride
                if k > h + 2 * p or k > w + 2 * p:
                    raise ModelSpecError(f"layer {i}: kernel {k} exceeds padded input {shape}")
                if (h + 2 * p - k) % s or (w + 2 * p - k) % s:
                    raise ModelSpecError(f"layer {i}: non-integer output size on input {shape}")
                shape = (layer.out_channels, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)
            elif isinstance(layer, MaxPool):
                c, h, w = shape
                if layer.stride != layer.size:
                    raise ModelSpecError(f"layer {i}: maxpool needs stride == size")
                if h % layer.size or w % layer.size:
                    raise ModelSpecError(f"layer {i}: pool size {layer.size} does not divide {shape}")
                shape = (c, h // layer.size, w // layer.size)
            elif isinstance(layer, Flatten):
                if len(shape) != 3:
                    raise ModelSpecError(f"layer {i}: flatten on already-flat shape {shape}")
                shape = (shape[0] * shape[1] * shape[2],)
            elif isinstance(layer, Affine):
                if layer.activation not in ACTIVATIONS:
                    raise ModelSpecError(f"layer {i}: unknown activation {layer.activation!r}")
                shape = (layer.out_units,)
            elif isinstance(layer, SoftmaxHead):
                shape = (layer.num_classes,)

    def layer_shapes(self) -> list[tuple]:
        """Output shape after each layer (batch axis excluded)."""
        shapes = []
        shape = self.input_shape
        for layer in self.layers:
            if isinstance(layer, Conv):
                c, h, w = shape
                k, p, s = layer.kernel_size, layer.padding, layer.stride
                shape = (layer.out_channels, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)
            elif isinstance(layer, MaxPool):
                shape = (shape[0], shape[1] // layer.size, shape[2] // layer.size)
            elif isinstance(layer, Flatten):
                shape = (shape[0] * shape[1] * shape[2],)
            elif isinstance(layer, Affine):
                shape = (layer.out_units,)
            elif isinstance(layer, SoftmaxHead):
                shape = (layer.num_classes,)
            shapes.append(shape)
        return shapes

    def to_json(self) -> str:
        doc = {
            "input_shape": list(self.input_shape),
            "layers": [
                {"kind": kind, **{f: getattr(layer, f) for f in layer.__dataclass_fields__}}
                for layer in self.layers
                for kind in [_kind_of(layer)]
            ],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(text: str) -> "ModelSpec":
        doc = json.loads(text)
        layers = []
        for entry in doc["layers"]:
            entry = dict(entry)
            kind = entry.pop("kind")
            if kind not in _LAYER_KINDS:
                raise ModelSpecError(f"unknown layer kind {kind!r}")
            layers.append(_LAYER_KINDS[kind](**entry))
        return ModelSpec(tuple(doc["input_shape"]), tuple(layers))


def _kind_of(layer: Layer) -> str:
    for kind, cls in _LAYER_KINDS.items():
        if isinstance(layer, cls):
            return kind
    raise ModelSpecError(f"unknown layer type {type(layer)!r}")


def build_lcn(input_shape=(3, 32, 32), num_classes: int = 2) -> ModelSpec:
    """Single linear 4-channel 3x3 conv (padding 1, no downsampling) + softmax head."""
    if num_classes < 2:
        raise ModelSpecError("need at least 2 classes")
    return ModelSpec(
        input_shape,
        (
            Conv(out_channels=4, kernel_size=3, padding=1, stride=1, activation="linear"),
            Flatten(),
            SoftmaxHead(num_classes),
        ),
    )


def _vgg11_layers(num_classes: int) -> tuple[Layer, ...]:
    # 8 conv / 3 affine layout; the two hidden affine layers are 1024 wide,
    # no dropout.
    widths = [(64,), "pool", (128,), "pool", (256, 256), "pool", (512, 512), "pool", (512, 512), "pool"]
    layers: list[Layer] = []
    for item in widths:
        if item == "pool":
            layers.append(MaxPool(2, 2))
        else:
            layers.extend(Conv(w, 3, 1, 1, "relu") for w in item)
    layers += [Flatten(), Affine(1024, "relu"), Affine(1024, "relu"), SoftmaxHead(num_classes)]
    return tuple(layers)


def _vgg_mini_layers(num_classes: int) -> tuple[Layer, ...]:
    return (
        Conv(32, 3, 1, 1, "relu"),
        MaxPool(2, 2),
        Conv(64, 3, 1, 1, "relu"),
        MaxPool(2, 2),
        Conv(128, 3, 1, 1, "relu"),
        MaxPool(2, 2),
        Flatten(),
        Affine(256, "relu"),
        SoftmaxHead(num_classes),
    )


HCN_PRESETS = {
    "vgg11": _vgg11_layers,
    "vgg-mini": _vgg_mini_layers,
}


def build_hcn(config, num_classes: int = 2, input_shape=(3, 32, 32)) -> ModelSpec:
    """Build a high-capacity model from a preset name or an explicit ModelSpec."""
    if isinstance(config, ModelSpec):
        return config
    if config not in HCN_PRESETS:
        raise ModelSpecError(f"unknown preset {config!r}; available: {sorted(HCN_PRESETS)}")
    return ModelSpec(input_shape, HCN_PRESETS[config](num_classes))


def build_model(arch, num_classes: int = 2, input_shape=(3, 32, 32)) -> ModelSpec:
    """Resolve "lcn", an HCN preset name, or an explicit ModelSpec."""
    if isinstance(arch, ModelSpec):
        return arch
    if arch == "lcn":
        return build_lcn(input_shape, num_classes)
    return build_hcn(arch, num_classes, input_shape)


def glorot_init(spec: ModelSpec, seed: int, dtype=np.float32) -> dict[str, Tensor]:
    """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero biases.

    Conv fans count each kernel position: fan_in = C*kh*kw, fan_out = K*kh*kw.
    Weights are nudged strictly inside the bound after the float32 cast.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    shapes = [spec.input_shape] + spec.layer_shapes()
    for i, layer in enumerate(spec.layers):
        shape = shapes[i]
        if isinstance(layer, Conv):
            c = shape[0]
            k, ksz = layer.out_channels, layer.kernel_size
            fan_in, fan_out = c * ksz * ksz, k * ksz * ksz
            params[f"layer{i}.kernels"] = _glorot_tensor(rng, (k, c, ksz, ksz), fan_in, fan_out, dtype)
            params[f"layer{i}.bias"] = Tensor(np.zeros(k, dtype=dtype), requires_grad=True)
        elif isinstance(layer, (Affine, SoftmaxHead)):
            d = shape[0]
            m = layer.out_units if isinstance(layer, Affine) else layer.num_classes
            params[f"layer{i}.weights"] = _glorot_tensor(rng, (d, m), d, m, dtype)
            params[f"layer{i}.bias"] = Tensor(np.zeros(m, dtype=dtype), requires_grad=True)
    return params


def _glorot_tensor(rng, shape, fan_in, fan_out, dtype) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    vals = rng.uniform(-bound, bound, size=shape).astype(dtype)
    inside = np.nextafter(np.asarray(bound, dtype=dtype), np.asarray(0, dtype=dtype))
    return Tensor(np.clip(vals, -inside, inside), requires_grad=True)


def forward(spec: ModelSpec, params: dict[str, Tensor], x: Tensor) -> Tensor:
    """Apply the model to a batch (N, C, H, W); returns logits (N, K).

    Convolutions run in channel-last layout internally (one rearrangement of
    the input batch buys large-transpose-free conv/pool passes).
    """
    out = ag.to_channel_last(x)
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            out = ag.conv2d(out, params[f"layer{i}.kernels"], params[f"layer{i}.bias"],
                            padding=layer.padding, stride=layer.stride, channel_last=True)
            if layer.activation == "relu":
                out = ag.relu(out)
        elif isinstance(layer, MaxPool):
            out = ag.maxpool2d(out, layer.size, layer.stride, channel_last=True)
        elif isinstance(layer, Flatten):
            out = ag.flatten(out)
        elif isinstance(layer, Affine):
            out = ag.affine(out, params[f"layer{i}.weights"], params[f"layer{i}.bias"])
            if layer.activation == "relu":
                out = ag.relu(out)
        elif isinstance(layer, SoftmaxHead):
            out = ag.affine(out, params[f"layer{i}.weights"], params[f"layer{i}.bias"])
    return out


def parameter_count(params: dict[str, Tensor]) -> int:
    return sum(t.data.size for t in params.values())


# Checkpoint archive: zip with the model spec as canonical JSON, a manifest
# of parameter names/shapes/dtypes, and raw little-endian buffers.  Fixed
# timestamps keep identical checkpoints byte-identical.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_checkpoint(path, spec: ModelSpec, params: dict[str, np.ndarray], meta: dict | None = None):
    entries = []
    names = list(params)
    manifest = {
        "parameters": [
            {"name": name, "shape": list(params[name].shape),
             "dtype": np.dtype(params[name].dtype).newbyteorder("<").str}
            for name in names
        ],
        "meta": meta or {},
    }
    entries.append(("spec.json", spec.to_json().encode()))
    entries.append(("manifest.json", json.dumps(manifest, sort_keys=True, indent=1).encode()))
    for name in names:
        arr = np.ascontiguousarray(params[name])
        entries.append((f"params/{name}.bin", arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()))
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, payload in entries:
            info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
            zf.writestr(info, payload)


def load_checkpoint(path) -> tuple[ModelSpec, dict[str, np.ndarray], dict]:
    with zipfile.ZipFile(path) as zf:
        spec = ModelSpec.from_json(zf.read("spec.json").decode())
        manifest = json.loads(zf.read("manifest.json").decode())
        params = {}
        for entry in manifest["parameters"]:
            raw = zf.read(f"params/{entry['name']}.bin")
            arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
            params[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return spec, params, manifest["meta"]
