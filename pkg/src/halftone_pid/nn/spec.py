"""Declarative layer lists and the four canonical architectures."""

from __future__ import annotations

from dataclasses import dataclass, field

CONV = "conv3x3"
POOL = "maxpool2x2"
FC = "fully-connected"
SOFTMAX = "softmax"

KINDS = (CONV, POOL, FC, SOFTMAX)
ACTIVATIONS = ("relu", "leaky-relu", "tanh", "none")

LEAKY_SLOPE = 0.2
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class ShapeError(ValueError):
    """Raised when a tensor does not fit the layer that consumes it."""

    def __init__(self, message: str, layer: int | None = None):
        self.layer = layer
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    stride: int = 1
    out: int = 0
    activation: str = "none"
    batch_norm: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.stride < 1:
            raise ValueError("stride must be positive")
        if self.kind in (CONV, FC) and self.out < 1:
            raise ValueError(f"{self.kind} needs a positive output width")
        if self.batch_norm and self.kind != CONV:
            raise ValueError("batch norm is only supported after conv3x3")

    @property
    def has_params(self) -> bool:
        return self.kind in (CONV, FC)

    def describe(self) -> str:
        if self.kind == CONV:
            return f"Conv3x3, stride={self.stride}, feature maps={self.out}"
        if self.kind == POOL:
            return f"MaxPool2x2, stride={self.stride}"
        if self.kind == FC:
            return f"FC{self.out}"
        return "Softmax"


def conv(out: int, stride: int = 1, activation: str = "relu", batch_norm: bool = False) -> LayerSpec:
    return LayerSpec(CONV, stride, out, activation, batch_norm)


def pool() -> LayerSpec:
    return LayerSpec(POOL, 2)


def fc(out: int, activation: str = "none") -> LayerSpec:
    return LayerSpec(FC, 1, out, activation)


def softmax_layer() -> LayerSpec:
    return LayerSpec(SOFTMAX)


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    input_dims: tuple[int, int, int] = (3, 64, 64)
    name: str = ""
    _chain: tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "_chain", tuple(self._derive_chain()))

    def _derive_chain(self):
        c, h, w = self.input_dims
        chain = []
        for num, layer in enumerate(self.layers, start=1):
            if layer.kind == CONV:
                if h < 1 or w < 1:
                    raise ShapeError("empty feature map", num)
                # same padding: pad 1 on every side
                h = (h - 1) // layer.stride + 1
                w = (w - 1) // layer.stride + 1
                c = layer.out
            elif layer.kind == POOL:
                if h % 2 or w % 2:
                    raise ShapeError(f"max-pool needs even dims, got {h}x{w}", num)
                h, w = h // 2, w // 2
            elif layer.kind == FC:
                c, h, w = layer.out, 1, 1
            elif layer.kind == SOFTMAX:
                if (h, w) != (1, 1):
                    raise ShapeError("softmax expects a flat vector", num)
            chain.append((c, h, w))
        return chain

    def output_dims(self, upto: int | None = None) -> tuple[int, int, int]:
        """(channels, height, width) after layer ``upto`` (1-based, default last)."""
        if upto is None:
            upto = len(self.layers)
        if upto == 0:
            return self.input_dims
        return self._chain[upto - 1]

    def input_dims_of(self, num: int) -> tuple[int, int, int]:
        return self.output_dims(num - 1)

    def param_layers(self) -> list[int]:
        return [n for n, layer in enumerate(self.layers, start=1) if layer.has_params]

    def __len__(self):
        return len(self.layers)


def _scaled(n: int, width: float) -> int:
    return max(1, int(round(n * width)))


def refiner_spec(width: float = 1.0) -> NetworkSpec:
    """Eight-conv fully convolutional refiner.

    The printed listing has stride 2 on layers 4, 6, 7, 8 and ends in 4 maps;
    here every stride is 1 and the last layer emits 3 maps so that the output
    is an image shaped like the input.
    """
    m = _scaled(64, width)
    layers = [conv(m) for _ in range(6)]
    layers.append(conv(_scaled(16, width)))
    layers.append(conv(3, activation="tanh"))
    return NetworkSpec(layers, (3, 64, 64), "refiner")


def discriminator_spec(width: float = 1.0) -> NetworkSpec:
    layers = []
    for maps in (64, 128, 256):
        m = _scaled(maps, width)
        layers.append(conv(m, 1, "leaky-relu"))
        layers.append(conv(m, 2, "leaky-relu"))
    layers.append(fc(2))
    return NetworkSpec(layers, (3, 64, 64), "discriminator")


def hcd_spec(width: float = 1.0) -> NetworkSpec:
    m = _scaled(64, width)
    layers = [conv(m, batch_norm=True) for _ in range(7)]
    # no activation on the decomposed planes; clamping happens at metric time
    layers.append(conv(4, activation="none", batch_norm=True))
    return NetworkSpec(layers, (3, 64, 64), "hcd")


def pi_spec(n_printers: int = 8, width: float = 1.0, fc_units: int = 4096) -> NetworkSpec:
    m1, m2, m3 = _scaled(64, width), _scaled(128, width), _scaled(256, width)
    layers = [conv(m1, batch_norm=True) for _ in range(9)]
    layers.append(pool())
    layers += [conv(m2, batch_norm=True), conv(m2, batch_norm=True), pool()]
    layers += [conv(m3, batch_norm=True), conv(m3, batch_norm=True), pool()]
    layers += [fc(fc_units, "relu"), fc(fc_units, "relu"), fc(n_printers), softmax_layer()]
    return NetworkSpec(layers, (3, 64, 64), "pi")


REFINER = refiner_spec()
DISCRIMINATOR = discriminator_spec()
HCD = hcd_spec()
PI = pi_spec()
