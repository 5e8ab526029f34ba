"""Printer identification from 64x64 halftone blocks.

The classifier's first seven conv layers are copied from a trained HCD
network, the rest start from Xavier. Training runs in two phases: plain
centre crops, then crops resampled with random scale and rotation. An image
is identified by averaging block softmax vectors over its 64x64 tiling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .nn import (
    AdamState,
    EarlyStopping,
    NetworkParams,
    NetworkSpec,
    adam_step,
    apply_running_stats,
    backward,
    forward,
    param_shapes,
    pi_spec,
    predict,
    softmax,
    xavier_init,
)
from .nn.network import pname

BLOCK = 64
REGION = 96
_LAYER_ENTRIES = ("weight", "bias", "bn_scale", "bn_shift", "bn_mean", "bn_var")


@dataclass(frozen=True)
class TransferMap:
    pairs: tuple[tuple[int, int], ...] = tuple((i, i) for i in range(1, 8))


def transfer_init(
    hcd_params: NetworkParams,
    hcd: NetworkSpec,
    pi: NetworkSpec,
    seed: int,
    mapping: TransferMap = TransferMap(),
) -> NetworkParams:
    """Xavier-initialize ``pi`` from ``seed`` and copy the mapped HCD layers verbatim."""
    src_shapes, dst_shapes = param_shapes(hcd), param_shapes(pi)
    params = xavier_init(pi, seed)
    for s, d in mapping.pairs:
        src = {e: pname(s, e) for e in _LAYER_ENTRIES if pname(s, e) in src_shapes}
        dst = {e: pname(d, e) for e in _LAYER_ENTRIES if pname(d, e) in dst_shapes}
        if set(src) != set(dst) or any(src_shapes[src[e]] != dst_shapes[dst[e]] for e in src):
            raise ValueError(f"layer {s} -> {d}: shapes are incompatible")
        for e in src:
            params[dst[e]] = hcd_params[src[e]].copy()
    return params


@dataclass(frozen=True)
class AugmentPolicy:
    scales: tuple[float, ...] = (0.8, 1.0, 1.2)
    angles: tuple[float, ...] = (-10.0, 0.0, 10.0)

    def __post_init__(self):
        if not self.scales or not self.angles:
            raise ValueError("scale and angle sets must be nonempty")
        if 1.0 not in self.scales or 0.0 not in self.angles:
            raise ValueError("policy must contain the identity (1.0, 0 degrees)")

    def sample(self, rng: np.random.Generator) -> tuple[float, float]:
        return float(rng.choice(self.scales)), float(rng.choice(self.angles))


IDENTITY_POLICY = AugmentPolicy((1.0,), (0.0,))


def center_crop(region: np.ndarray, size: int = BLOCK) -> np.ndarray:
    h, w = region.shape[-2:]
    top, left = (h - size) // 2, (w - size) // 2
    return region[..., top:top + size, left:left + size].copy()


def augment_block(region: np.ndarray, s: float, theta: float, rng=None) -> np.ndarray:
    """Scale by ``s`` and rotate by ``theta`` degrees about the region centre, then crop 64x64.

    ``region`` is (1, 3, H, W) or (3, H, W). Resampling is bilinear; the
    identity parameters return the exact centre crop. ``rng`` is accepted for
    interface symmetry with random policies and is unused.
    """
    if not 0.5 <= s <= 2.0:
        raise ValueError(f"scale {s} outside [0.5, 2]")
    if abs(theta) > 45:
        raise ValueError(f"rotation {theta} outside [-45, 45] degrees")
    if s == 1.0 and theta == 0.0:
        return center_crop(region)
    squeeze = region.ndim == 3
    r = region[None] if squeeze else region
    h, w = r.shape[-2:]
    t = np.deg2rad(theta)
    cos, sin = np.cos(t), np.sin(t)
    # inverse map: output offset -> source offset = R(-theta) * offset / s
    matrix = np.array([[cos, sin], [-sin, cos]]) / s
    c_out = (BLOCK - 1) / 2
    c_in = np.array([(h - 1) / 2, (w - 1) / 2])
    offset = c_in - matrix @ np.array([c_out, c_out])
    out = np.empty(r.shape[:2] + (BLOCK, BLOCK), r.dtype)
    for n in range(r.shape[0]):
        for c in range(r.shape[1]):
            out[n, c] = ndimage.affine_transform(
                r[n, c].astype(np.float64), matrix, offset, output_shape=(BLOCK, BLOCK), order=1, mode="nearest"
            )
    return out[0] if squeeze else out


@dataclass
class PiConfig:
    lr: float = 2e-5
    batch_size: int = 32
    patience: int = 10
    max_epochs: int = 100
    n_printers: int = 8
    width: float = 1.0
    fc_units: int = 4096

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.n_printers < 2:
            raise ValueError("need at least two printers")

    def spec(self) -> NetworkSpec:
        return pi_spec(self.n_printers, self.width, self.fc_units)


@dataclass
class PiResult:
    params: NetworkParams
    spec: NetworkSpec
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def stop_epoch(self) -> int:
        return len(self.val_accuracy)


def _xent_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    p = softmax(logits.reshape(len(logits), -1).astype(np.float64), axis=1)
    p[np.arange(len(labels)), labels] -= 1
    return p.reshape(logits.shape).astype(logits.dtype)


def _xent(logits: np.ndarray, labels: np.ndarray) -> float:
    z = logits.reshape(len(logits), -1).astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].sum())


def block_accuracy(spec: NetworkSpec, params: NetworkParams, blocks: np.ndarray, labels: np.ndarray) -> float:
    probs = predict(spec, params, blocks)
    return float(np.mean(probs.reshape(len(blocks), -1).argmax(axis=1) == labels))


def make_blocks(regions: np.ndarray, policy: AugmentPolicy | None, rng: np.random.Generator) -> np.ndarray:
    """Centre crops (``policy`` None) or one random policy draw per region."""
    if policy is None:
        return center_crop(regions)
    return np.stack([augment_block(r, *policy.sample(rng)) for r in regions])


def _train(config, spec, params, train_regions, train_labels, val_blocks, val_labels, seed, policy, progress):
    logit_layer = len(spec.layers) - 1  # everything but the softmax layer
    opt = AdamState()
    rng = np.random.default_rng(seed)
    result = PiResult(params, spec)
    best, stopper = params, EarlyStopping(config.patience, "max")
    b = config.batch_size
    labels = np.asarray(train_labels)
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_regions))
        total = 0.0
        for start in range(0, len(order), b):
            sel = np.sort(order[start:start + b])
            x = make_blocks(train_regions[sel], policy, rng)
            logits, cache = forward(spec, params, x, "train", upto=logit_layer)
            loss = _xent(logits, labels[sel])
            if not np.isfinite(loss):
                raise FloatingPointError(f"classifier loss became {loss} in epoch {epoch + 1}")
            grads, _ = backward(spec, params, cache, _xent_grad(logits, labels[sel]), need_input_grad=False)
            params, opt = adam_step(params, grads, opt, config.lr)
            params = apply_running_stats(params, cache)
            total += loss
        result.train_loss.append(total / len(order))
        acc = block_accuracy(spec, params, val_blocks, np.asarray(val_labels))
        result.val_accuracy.append(acc)
        if progress is not None:
            progress(epoch + 1, result)
        if stopper.update(acc):
            best = params
            result.best_epoch = stopper.best_epoch
        elif stopper.should_stop:
            break
    result.params = best
    return result


def train_phase1(
    config: PiConfig,
    train_regions: np.ndarray,
    train_labels: np.ndarray,
    val_regions: np.ndarray,
    val_labels: np.ndarray,
    init: NetworkParams,
    seed: int,
    progress=None,
) -> PiResult:
    """Cross-entropy training on centre crops; keeps the best validation epoch (earliest on ties)."""
    spec = config.spec()
    return _train(config, spec, init, train_regions, train_labels, center_crop(val_regions), val_labels,
                  seed, None, progress)


def train_phase2(
    config: PiConfig,
    train_regions: np.ndarray,
    train_labels: np.ndarray,
    val_regions: np.ndarray,
    val_labels: np.ndarray,
    init: NetworkParams,
    seed: int,
    policy: AugmentPolicy = AugmentPolicy(),
    progress=None,
) -> PiResult:
    """Fine-tune with a fresh (scale, angle) draw per block per epoch.

    The validation blocks are augmented once with the same policy.
    """
    spec = config.spec()
    val_blocks = make_blocks(val_regions, policy, np.random.default_rng(seed + 7919))
    return _train(config, spec, init, train_regions, train_labels, val_blocks, val_labels,
                  seed, policy, progress)


def classify_block(spec: NetworkSpec, params: NetworkParams, block: np.ndarray) -> np.ndarray:
    """Softmax vector for one (1, 3, 64, 64) block."""
    block = block[None] if block.ndim == 3 else block
    return predict(spec, params, block).reshape(-1)


def tile_blocks(image: np.ndarray) -> np.ndarray:
    """Non-overlapping 64x64 tiles in row-major order; edge remainders dropped."""
    image = image[0] if image.ndim == 4 else image
    _, h, w = image.shape
    if h < BLOCK or w < BLOCK:
        raise ValueError(f"image {h}x{w} is smaller than one {BLOCK}x{BLOCK} block")
    rows, cols = h // BLOCK, w // BLOCK
    t = image[:, : rows * BLOCK, : cols * BLOCK].reshape(-1, rows, BLOCK, cols, BLOCK)
    return np.ascontiguousarray(t.transpose(1, 3, 0, 2, 4).reshape(rows * cols, -1, BLOCK, BLOCK))


def identify_image(spec: NetworkSpec, params: NetworkParams, image: np.ndarray, batch_size: int = 64):
    """Average the block softmax vectors; returns (printer index, mean vector).

    ``np.argmax`` returns the lowest index among ties.
    """
    probs = predict(spec, params, tile_blocks(image), batch_size).reshape(-1, spec.output_dims()[0])
    mean = probs.astype(np.float64).mean(axis=0)
    return int(np.argmax(mean)), mean
