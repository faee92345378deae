"""Model specifications and the named architectures studied.

A :class:`ModelSpec` is an ordered list of layers. Activations are indexed so
that index 0 is the network input and index ``i`` is the output of the i-th
layer (1-based); a :class:`ResidualJoin` adds activation ``source`` to the
previous activation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Union

from vicnn.errors import ValidationError

ACTIVATIONS = ("sigmoid", "relu", "none")
SPEC_FORMAT = "vicnn-model"
SPEC_VERSION = 1


@dataclass(frozen=True)
class Conv:
    out_ch: int
    kernel: int = 5
    stride: int = 1
    dilation: int = 1
    activation: str = "sigmoid"


@dataclass(frozen=True)
class MaxPool2:
    pass


@dataclass(frozen=True)
class Upsample2:
    pass


@dataclass(frozen=True)
class ResidualJoin:
    source: int


Layer = Union[Conv, MaxPool2, Upsample2, ResidualJoin]


@dataclass(frozen=True)
class ModelSpec:
    name: str
    layers: tuple
    input_shape: tuple = (3, 128, 128)
    notes: tuple = field(default=(), compare=False)

    @property
    def conv_layers(self) -> list[Conv]:
        return [layer for layer in self.layers if isinstance(layer, Conv)]

    def validate(self) -> list[tuple[int, int, int]]:
        """Propagate shapes layer by layer; returns the shape of every activation.

        Raises :class:`ValidationError` on any inconsistency.
        """
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ValidationError(f"{self.name}: bad input shape {self.input_shape}")
        if not self.layers:
            raise ValidationError(f"{self.name}: no layers")
        shapes = [tuple(self.input_shape)]
        for i, layer in enumerate(self.layers, start=1):
            c, h, w = shapes[-1]
            if isinstance(layer, Conv):
                if layer.out_ch < 1:
                    raise ValidationError(f"{self.name}: layer {i} has {layer.out_ch} filters")
                if layer.kernel < 1 or layer.kernel % 2 == 0:
                    raise ValidationError(f"{self.name}: layer {i} kernel {layer.kernel} must be odd")
                if layer.stride < 1 or layer.dilation < 1:
                    raise ValidationError(f"{self.name}: layer {i} stride/dilation must be >= 1")
                if layer.activation not in ACTIVATIONS:
                    raise ValidationError(f"{self.name}: layer {i} activation {layer.activation!r}")
                span = layer.dilation * (layer.kernel - 1) + 1
                pad = layer.dilation * (layer.kernel - 1) // 2
                h2 = (h + 2 * pad - span) // layer.stride + 1
                w2 = (w + 2 * pad - span) // layer.stride + 1
                if h2 < 1 or w2 < 1:
                    raise ValidationError(f"{self.name}: layer {i} collapses {h}x{w}")
                shapes.append((layer.out_ch, h2, w2))
            elif isinstance(layer, MaxPool2):
                if h % 2 or w % 2:
                    raise ValidationError(f"{self.name}: layer {i} pools odd size {h}x{w}")
                shapes.append((c, h // 2, w // 2))
            elif isinstance(layer, Upsample2):
                shapes.append((c, 2 * h, 2 * w))
            elif isinstance(layer, ResidualJoin):
                if not 0 <= layer.source < i - 1:
                    raise ValidationError(
                        f"{self.name}: layer {i} joins from activation {layer.source}, "
                        f"which is not an earlier activation"
                    )
                if shapes[layer.source] != shapes[-1]:
                    raise ValidationError(
                        f"{self.name}: layer {i} joins {shapes[layer.source]} into {shapes[-1]}"
                    )
                shapes.append(shapes[-1])
            else:
                raise ValidationError(f"{self.name}: unknown layer {layer!r}")
        if shapes[-1] != (3, self.input_shape[1], self.input_shape[2]):
            raise ValidationError(
                f"{self.name}: output shape {shapes[-1]} != (3, {self.input_shape[1]}, {self.input_shape[2]})"
            )
        return shapes

    def param_count(self) -> int:
        total, c = 0, self.input_shape[0]
        for layer in self.layers:
            if isinstance(layer, Conv):
                total += layer.out_ch * c * layer.kernel**2 + layer.out_ch
                c = layer.out_ch
        return total

    def with_input_size(self, size: int) -> "ModelSpec":
        return replace(self, input_shape=(self.input_shape[0], size, size))

    # serialization

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            if isinstance(layer, Conv):
                layers.append({"type": "conv", "out_ch": layer.out_ch, "kernel": layer.kernel,
                               "stride": layer.stride, "dilation": layer.dilation,
                               "activation": layer.activation})
            elif isinstance(layer, MaxPool2):
                layers.append({"type": "maxpool2"})
            elif isinstance(layer, Upsample2):
                layers.append({"type": "upsample2"})
            else:
                layers.append({"type": "residual", "source": layer.source})
        return {
            "format": SPEC_FORMAT,
            "version": SPEC_VERSION,
            "name": self.name,
            "notes": list(self.notes),
            "input_shape": list(self.input_shape),
            "layers": layers,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        if d.get("format") != SPEC_FORMAT or d.get("version") != SPEC_VERSION:
            raise ValidationError(f"not a {SPEC_FORMAT} v{SPEC_VERSION} document")
        layers = []
        try:
            for item in d["layers"]:
                kind = item["type"]
                if kind == "conv":
                    layers.append(Conv(int(item["out_ch"]), int(item["kernel"]), int(item["stride"]),
                                       int(item["dilation"]), str(item["activation"])))
                elif kind == "maxpool2":
                    layers.append(MaxPool2())
                elif kind == "upsample2":
                    layers.append(Upsample2())
                elif kind == "residual":
                    layers.append(ResidualJoin(int(item["source"])))
                else:
                    raise ValidationError(f"unknown layer type {kind!r}")
            spec = cls(str(d["name"]), tuple(layers), tuple(int(v) for v in d["input_shape"]),
                       tuple(d.get("notes", ())))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed model spec: {exc}") from exc
        spec.validate()
        return spec

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"model spec is not JSON: {exc}") from exc


def save_spec(spec: ModelSpec, path) -> None:
    Path(path).write_text(spec.to_json(), encoding="utf-8")


def load_spec(path) -> ModelSpec:
    return ModelSpec.from_json(Path(path).read_text(encoding="utf-8"))


_JAIN_NOTES = (
    "hidden width 8 inherited from the one-layer net",
    "output layer is a linear convolution (no activation)",
)


def _shape(size):
    return (3, size, size)


def build_identity(size: int = 128) -> ModelSpec:
    """Single linear 1x1 conv; with identity weights it passes input through."""
    return ModelSpec("identity", (Conv(3, 1, activation="none"),), _shape(size))


def build_base_net(kernel: int = 5, size: int = 128) -> ModelSpec:
    """One sigmoid hidden layer of 8 maps plus a linear 3-channel output conv.

    Shared by the denoising, deblurring and color-constancy nets.
    """
    name = "base" if kernel == 5 else f"base_k{kernel}"
    return ModelSpec(
        name,
        (Conv(8, kernel, activation="sigmoid"), Conv(3, kernel, activation="none")),
        _shape(size),
        ("output layer is a linear convolution (no activation)",),
    )


def build_jain2009(kernel: int = 5, size: int = 128) -> ModelSpec:
    name = "jain2009" if kernel == 5 else f"jain2009_k{kernel}"
    hidden = tuple(Conv(8, kernel, activation="sigmoid") for _ in range(4))
    return ModelSpec(name, hidden + (Conv(3, kernel, activation="none"),), _shape(size), _JAIN_NOTES)


def build_jain2009_pool(kernel: int = 5, size: int = 128) -> ModelSpec:
    conv = Conv(8, kernel, activation="sigmoid")
    layers = (conv, MaxPool2(), conv, MaxPool2(), conv, Upsample2(), conv, Upsample2(),
              Conv(3, kernel, activation="none"))
    name = "jain2009_pool" if kernel == 5 else f"jain2009_pool_k{kernel}"
    return ModelSpec(name, layers, _shape(size), _JAIN_NOTES + ("max pooling of size 2",))


def build_jain2009_dilated(rate: int, kernel: int = 5, size: int = 128) -> ModelSpec:
    if rate == 1:
        return build_jain2009(kernel, size)
    if rate < 1:
        raise ValidationError(f"dilation rate must be >= 1, got {rate}")
    hidden = tuple(Conv(8, kernel, dilation=rate, activation="sigmoid") for _ in range(4))
    name = f"jain2009_dilated{rate}" if kernel == 5 else f"jain2009_dilated{rate}_k{kernel}"
    return ModelSpec(name, hidden + (Conv(3, kernel, activation="none"),), _shape(size),
                     _JAIN_NOTES + ("padding scaled with dilation to preserve size",))


def build_jain2009_residual(kernel: int = 5, size: int = 128) -> ModelSpec:
    base = build_jain2009(kernel, size)
    layers = base.layers[:4] + (ResidualJoin(1),) + base.layers[4:]
    name = "jain2009_residual" if kernel == 5 else f"jain2009_residual_k{kernel}"
    return ModelSpec(name, layers, _shape(size), _JAIN_NOTES + ("skip from first conv output to output conv input",))


def build_deep_residual_denoiser(depth: int = 8, size: int = 128, width: int = 64) -> ModelSpec:
    """Plain ReLU conv stack predicting a correction that is added to the input.

    Batch normalization is left out; depth counts conv layers.
    """
    if depth < 2:
        raise ValidationError(f"depth must be >= 2, got {depth}")
    hidden = tuple(Conv(width, 3, activation="relu") for _ in range(depth - 1))
    layers = hidden + (Conv(3, 3, activation="none"), ResidualJoin(0))
    return ModelSpec(f"deep_residual_d{depth}", layers, _shape(size),
                     ("batch normalization omitted", "residual from network input"))


def with_kernel_size(spec: ModelSpec, k: int) -> ModelSpec:
    """Replace every conv kernel by ``k x k``; padding follows automatically."""
    if k < 1 or k % 2 == 0:
        raise ValidationError(f"kernel size must be odd, got {k}")
    if all(c.kernel == k for c in spec.conv_layers):
        return spec
    layers = tuple(replace(l, kernel=k) if isinstance(l, Conv) else l for l in spec.layers)
    stem = spec.name.rsplit("_k", 1)[0] if "_k" in spec.name else spec.name
    return replace(spec, name=f"{stem}_k{k}", layers=layers)


# name -> builder(kernel, size). Used by the CLI and the zoo listing.
BUILDERS = {
    "identity": lambda kernel=5, size=128: build_identity(size),
    "base": lambda kernel=5, size=128: build_base_net(kernel, size),
    "jain2009": lambda kernel=5, size=128: build_jain2009(kernel, size),
    "jain2009_pool": lambda kernel=5, size=128: build_jain2009_pool(kernel, size),
    "jain2009_dilated2": lambda kernel=5, size=128: build_jain2009_dilated(2, kernel, size),
    "jain2009_dilated4": lambda kernel=5, size=128: build_jain2009_dilated(4, kernel, size),
    "jain2009_dilated8": lambda kernel=5, size=128: build_jain2009_dilated(8, kernel, size),
    "jain2009_residual": lambda kernel=5, size=128: build_jain2009_residual(kernel, size),
    "deep_residual": lambda kernel=5, size=128, depth=8: build_deep_residual_denoiser(depth, size),
}


def build(name: str, kernel: int | None = None, size: int = 128, depth: int = 8) -> ModelSpec:
    """Build a named architecture, optionally overriding every kernel size."""
    if name not in BUILDERS:
        raise ValidationError(f"unknown architecture {name!r}; choose from {sorted(BUILDERS)}")
    if name == "deep_residual":
        spec = build_deep_residual_denoiser(depth, size)
    else:
        spec = BUILDERS[name](size=size)
    if kernel is not None:
        spec = with_kernel_size(spec, kernel)
    spec.validate()
    return spec
