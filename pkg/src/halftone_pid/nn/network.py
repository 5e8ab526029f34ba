"""Forward and backward passes over sequential layer stacks.

Tensors at the API boundary are (batch, channels, height, width) arrays.
Internally the spatial layers run channels-last, which lets each 3x3
convolution be written as nine shifted matrix products without an im2col
buffer. Fully-connected layers flatten in (channel, row, column) order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import conv_backward, conv_forward
from .spec import (
    BN_EPS,
    BN_MOMENTUM,
    CONV,
    FC,
    LEAKY_SLOPE,
    POOL,
    SOFTMAX,
    NetworkSpec,
    ShapeError,
)

Params = dict[str, np.ndarray]

TRAINABLE = ("weight", "bias", "bn_scale", "bn_shift")


def pname(layer: int, entry: str) -> str:
    return f"{layer}.{entry}"


@dataclass
class NetworkParams:
    entries: Params
    rng_seed: int | None = None

    def __getitem__(self, key: str) -> np.ndarray:
        return self.entries[key]

    def __setitem__(self, key: str, value: np.ndarray):
        self.entries[key] = value

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def keys(self):
        return self.entries.keys()

    def items(self):
        return self.entries.items()

    def copy(self) -> "NetworkParams":
        return NetworkParams({k: v.copy() for k, v in self.entries.items()}, self.rng_seed)

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams({k: v.astype(dtype) for k, v in self.entries.items()}, self.rng_seed)

    def trainable(self) -> list[str]:
        return [k for k in self.entries if k.split(".", 1)[1] in TRAINABLE]

    def layer(self, num: int) -> Params:
        prefix = f"{num}."
        return {k[len(prefix):]: v for k, v in self.entries.items() if k.startswith(prefix)}


def param_shapes(spec: NetworkSpec) -> dict[str, tuple[int, int, int, int]]:
    """Every parameter tensor the spec needs, as 4-D dims."""
    shapes = {}
    for num, layer in enumerate(spec.layers, start=1):
        c, h, w = spec.input_dims_of(num)
        if layer.kind == CONV:
            shapes[pname(num, "weight")] = (layer.out, c, 3, 3)
            shapes[pname(num, "bias")] = (1, layer.out, 1, 1)
            if layer.batch_norm:
                for entry in ("bn_scale", "bn_shift", "bn_mean", "bn_var"):
                    shapes[pname(num, entry)] = (1, layer.out, 1, 1)
        elif layer.kind == FC:
            shapes[pname(num, "weight")] = (layer.out, c * h * w, 1, 1)
            shapes[pname(num, "bias")] = (1, layer.out, 1, 1)
    return shapes


def xavier_init(spec: NetworkSpec, seed: int) -> NetworkParams:
    """Uniform Xavier weights, zero biases, identity batch-norm."""
    rng = np.random.default_rng(seed)
    entries: Params = {}
    for name, dims in param_shapes(spec).items():
        entry = name.split(".", 1)[1]
        if entry == "weight":
            fan_in = dims[1] * dims[2] * dims[3]
            fan_out = dims[0] * dims[2] * dims[3]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            entries[name] = rng.uniform(-bound, bound, size=dims).astype(np.float32)
        elif entry in ("bn_scale", "bn_var"):
            entries[name] = np.ones(dims, np.float32)
        else:
            entries[name] = np.zeros(dims, np.float32)
    return NetworkParams(entries, seed)


def check_params(spec: NetworkSpec, params: NetworkParams):
    for name, dims in param_shapes(spec).items():
        if name not in params:
            raise ShapeError(f"missing parameter {name}", int(name.split(".")[0]))
        if params[name].shape != dims:
            raise ShapeError(
                f"parameter {name} has dims {params[name].shape}, expected {dims}",
                int(name.split(".")[0]),
            )


# -- activations ----------------------------------------------------------

def _act_forward(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0)
    if kind == "leaky-relu":
        return np.where(z > 0, z, z * z.dtype.type(LEAKY_SLOPE))
    if kind == "tanh":
        return np.tanh(z)
    return z


def _act_backward(kind: str, z: np.ndarray, a: np.ndarray, g: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return g * (z > 0)
    if kind == "leaky-relu":
        return np.where(z > 0, g, g * g.dtype.type(LEAKY_SLOPE))
    if kind == "tanh":
        return g * (1 - a * a)
    return g


# -- batch norm (channels-last, statistics over N, H, W) --------------------

def _bn_train(z: np.ndarray, scale: np.ndarray, shift: np.ndarray):
    axes = (0, 1, 2)
    mean = z.mean(axis=axes)
    var = z.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + z.dtype.type(BN_EPS))
    xhat = (z - mean) * inv_std
    out = xhat * scale.reshape(-1) + shift.reshape(-1)
    return out, xhat, inv_std, mean, var


def _bn_eval(z, scale, shift, mean, var):
    inv_std = 1.0 / np.sqrt(var.reshape(-1) + z.dtype.type(BN_EPS))
    return (z - mean.reshape(-1)) * inv_std * scale.reshape(-1) + shift.reshape(-1)


def _bn_backward(g, xhat, inv_std, scale):
    axes = (0, 1, 2)
    m = g.shape[0] * g.shape[1] * g.shape[2]
    dscale = (g * xhat).sum(axis=axes)
    dshift = g.sum(axis=axes)
    gx = g * scale.reshape(-1)
    dz = (inv_std / m) * (m * gx - gx.sum(axis=axes) - xhat * (gx * xhat).sum(axis=axes))
    return dz, dscale.reshape(1, -1, 1, 1), dshift.reshape(1, -1, 1, 1)


# -- max pool ----------------------------------------------------------------

def _pool_forward(x: np.ndarray):
    n, h, w, c = x.shape
    blocks = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    blocks = blocks.reshape(n, h // 2, w // 2, c, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(g: np.ndarray, idx: np.ndarray):
    n, h2, w2, c = g.shape
    onehot = idx[..., None] == np.arange(4)
    d = (onehot * g[..., None]).reshape(n, h2, w2, c, 2, 2)
    return d.transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * h2, 2 * w2, c)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-shifted softmax along ``axis``."""
    z = np.asarray(logits)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


# -- network passes ------------------------------------------------------------

@dataclass
class ForwardCache:
    mode: str
    upto: int
    layers: list = field(default_factory=list)
    running: Params = field(default_factory=dict)


def forward(
    spec: NetworkSpec,
    params: NetworkParams,
    x: np.ndarray,
    mode: str = "eval",
    upto: int | None = None,
):
    """Run layers 1..``upto`` and return ``(output, cache)``.

    In train mode batch norm uses batch statistics and the cache carries the
    updated running statistics in ``cache.running``; ``params`` is never
    mutated. Use :func:`apply_running_stats` to commit them.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if upto is None:
        upto = len(spec.layers)
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(spec.input_dims):
        raise ShapeError(f"input dims {x.shape[1:]} do not match {spec.input_dims}", 1)
    check_params(spec, params)
    cache = ForwardCache(mode, upto)
    train = mode == "train"

    h = x.transpose(0, 2, 3, 1)  # channels-last
    flat = False
    for num, layer in enumerate(spec.layers[:upto], start=1):
        rec = {}
        if layer.kind == CONV:
            w, b = params[pname(num, "weight")], params[pname(num, "bias")]
            rec["x"] = h
            z = conv_forward(h, w, b, layer.stride)
            if layer.batch_norm:
                scale, shift = params[pname(num, "bn_scale")], params[pname(num, "bn_shift")]
                if train:
                    z, rec["xhat"], rec["inv_std"], mean, var = _bn_train(z, scale, shift)
                    mom = BN_MOMENTUM
                    rm, rv = params[pname(num, "bn_mean")], params[pname(num, "bn_var")]
                    cache.running[pname(num, "bn_mean")] = (
                        mom * rm + (1 - mom) * mean.reshape(rm.shape)
                    ).astype(rm.dtype)
                    cache.running[pname(num, "bn_var")] = (
                        mom * rv + (1 - mom) * var.reshape(rv.shape)
                    ).astype(rv.dtype)
                else:
                    z = _bn_eval(
                        z, scale, shift,
                        params[pname(num, "bn_mean")], params[pname(num, "bn_var")],
                    )
            h = _act_forward(layer.activation, z)
            rec["z"], rec["a"] = z, h
        elif layer.kind == POOL:
            h, rec["idx"] = _pool_forward(h)
        elif layer.kind == FC:
            if not flat:
                rec["unflat"] = h.shape
                h = h.transpose(0, 3, 1, 2).reshape(h.shape[0], -1)
                flat = True
            rec["x"] = h
            w, b = params[pname(num, "weight")], params[pname(num, "bias")]
            z = h @ w[:, :, 0, 0].T + b.reshape(-1)
            h = _act_forward(layer.activation, z)
            rec["z"], rec["a"] = z, h
        elif layer.kind == SOFTMAX:
            h = softmax(h if flat else h.reshape(h.shape[0], -1), axis=1)
            flat = True
            rec["p"] = h
        if train:
            cache.layers.append(rec)
        if not np.all(np.isfinite(h)):
            raise FloatingPointError(f"non-finite activation at layer {num}")

    if flat:
        out = h.reshape(h.shape[0], -1, 1, 1)
    else:
        out = np.ascontiguousarray(h.transpose(0, 3, 1, 2))
    return out, cache


def backward(
    spec: NetworkSpec,
    params: NetworkParams,
    cache: ForwardCache,
    grad_out: np.ndarray,
    need_input_grad: bool = True,
    need_param_grads: bool = True,
):
    """Backpropagate ``grad_out`` through a train-mode forward pass.

    Returns ``(param_grads, input_grad)``; batch-norm running statistics get no
    gradient. ``input_grad`` is None when ``need_input_grad`` is false; with
    ``need_param_grads`` false only the input gradient is computed.
    """
    if cache.mode != "train":
        raise ValueError("backward needs the cache of a train-mode forward pass")
    upto = cache.upto
    out_c, out_h, out_w = spec.output_dims(upto)
    if grad_out.shape[1:] != (out_c, out_h, out_w):
        raise ShapeError(f"output gradient dims {grad_out.shape[1:]} do not match", upto)

    layers = spec.layers[:upto]
    flat = any(layer.kind in (FC, SOFTMAX) for layer in layers)
    g = grad_out.reshape(grad_out.shape[0], -1) if flat else grad_out.transpose(0, 2, 3, 1)
    grads: Params = {}
    for num in range(upto, 0, -1):
        layer, rec = layers[num - 1], cache.layers[num - 1]
        if layer.kind == SOFTMAX:
            p = rec["p"]
            g = p * (g - (g * p).sum(axis=1, keepdims=True))
        elif layer.kind == FC:
            g = _act_backward(layer.activation, rec["z"], rec["a"], g)
            w = params[pname(num, "weight")]
            if need_param_grads:
                grads[pname(num, "weight")] = (g.T @ rec["x"])[:, :, None, None]
                grads[pname(num, "bias")] = g.sum(axis=0).reshape(1, -1, 1, 1)
            g = g @ w[:, :, 0, 0]
            if "unflat" in rec:
                n, hh, ww, cc = rec["unflat"]
                g = g.reshape(n, cc, hh, ww).transpose(0, 2, 3, 1)
        elif layer.kind == POOL:
            g = _pool_backward(g, rec["idx"])
        elif layer.kind == CONV:
            g = _act_backward(layer.activation, rec["z"], rec["a"], g)
            if layer.batch_norm:
                g, dscale, dshift = _bn_backward(
                    g, rec["xhat"], rec["inv_std"], params[pname(num, "bn_scale")]
                )
                if need_param_grads:
                    grads[pname(num, "bn_scale")] = dscale
                    grads[pname(num, "bn_shift")] = dshift
            need = need_input_grad or num > 1
            g, dw, db = conv_backward(
                g, rec["x"], params[pname(num, "weight")], layer.stride, need, need_param_grads
            )
            if need_param_grads:
                grads[pname(num, "weight")] = dw
                grads[pname(num, "bias")] = db
    for name, value in grads.items():
        if not np.all(np.isfinite(value)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    if g is None:
        return grads, None
    if g.ndim == 2:
        return grads, g.reshape(g.shape[0], *spec.input_dims)
    return grads, np.ascontiguousarray(g.transpose(0, 3, 1, 2))


def apply_running_stats(params: NetworkParams, cache: ForwardCache) -> NetworkParams:
    if not cache.running:
        return params
    out = NetworkParams(dict(params.entries), params.rng_seed)
    out.entries.update(cache.running)
    return out


def predict(spec: NetworkSpec, params: NetworkParams, x: np.ndarray, batch_size: int = 64, upto=None):
    """Eval-mode forward in chunks."""
    outs = [
        forward(spec, params, x[i:i + batch_size], "eval", upto)[0]
        for i in range(0, len(x), batch_size)
    ]
    return np.concatenate(outs, axis=0)
