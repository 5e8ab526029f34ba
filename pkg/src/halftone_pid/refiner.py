"""Adversarial refinement of synthetic halftones (simulated + unsupervised learning).

The refiner maps a synthetic 64x64 RGB halftone to a "refined" image of the
same shape; its last Tanh layer is rescaled to [0, 1]. The discriminator
emits two logits ordered (fake, real). Training alternates two refiner
updates with one discriminator update, feeding the discriminator a mix of
fresh refinements and images replayed from a bounded history buffer.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import (
    AdamState,
    NetworkParams,
    NetworkSpec,
    adam_step,
    backward,
    discriminator_spec,
    forward,
    predict,
    refiner_spec,
    softmax,
    xavier_init,
)

log = logging.getLogger(__name__)

FAKE, REAL = 0, 1  # one-hot positions: t_fake = [1, 0], t_real = [0, 1]


@dataclass
class GanConfig:
    lam: float = 1e-5
    batch_size: int = 32
    max_iters: int = 1000
    refiner_lr: float = 1e-5
    disc_lr: float = 1e-5
    buffer_capacity: int = 640
    width: float = 1.0
    disc_width: float | None = None  # None: same as width
    # refiner steps on the self-regularization term alone before adversarial training
    pretrain_iters: int = 0

    def __post_init__(self):
        if self.batch_size % 2:
            raise ValueError("batch size must be even")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.pretrain_iters < 0:
            raise ValueError("pretrain_iters must be non-negative")


# -- losses ---------------------------------------------------------------------

def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, np.float64)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def _as_logits(logits) -> np.ndarray:
    return np.asarray(logits, np.float64).reshape(-1, 2)


def reg_loss(refined: np.ndarray, original: np.ndarray) -> float:
    """L2 norm of the difference (not squared)."""
    refined, original = np.asarray(refined, np.float64), np.asarray(original, np.float64)
    if refined.shape != original.shape:
        raise ValueError(f"dims differ: {refined.shape} vs {original.shape}")
    return float(np.sqrt(np.sum((refined - original) ** 2)))


def realism_loss(logits) -> float:
    """-log P(real) for one discriminator output."""
    return float(-_log_softmax(_as_logits(logits))[0, REAL])


def refiner_loss(originals, refined, logits, lam: float) -> float:
    logits = _as_logits(logits)
    total = 0.0
    for x, r, z in zip(originals, refined, logits):
        total += realism_loss(z) + lam * reg_loss(r, x)
    return total


def discriminator_loss(logits_refined, logits_real) -> float:
    """Two-class cross-entropy: refined images labelled fake, real images real."""
    fake = -_log_softmax(_as_logits(logits_refined))[:, FAKE].sum()
    real = -_log_softmax(_as_logits(logits_real))[:, REAL].sum()
    return float(fake + real)


def _xent_grad(logits: np.ndarray, target: int) -> np.ndarray:
    """d(sum of -log softmax[target]) / d logits, shaped like ``logits``."""
    flat = logits.reshape(len(logits), -1)
    g = softmax(flat.astype(np.float64), axis=1)
    g[:, target] -= 1
    return g.reshape(logits.shape).astype(logits.dtype)


def _reg_grad(refined: np.ndarray, original: np.ndarray) -> np.ndarray:
    diff = (refined - original).astype(np.float64)
    norms = np.sqrt((diff ** 2).reshape(len(diff), -1).sum(axis=1))
    safe = np.where(norms > 0, norms, 1.0).reshape(-1, 1, 1, 1)
    return (diff / safe).astype(refined.dtype)


# -- history buffer ---------------------------------------------------------------

class HistoryBuffer:
    """Bounded store of past refined images, kept as one preallocated array."""

    def __init__(self, capacity: int, image_dims=(3, 64, 64)):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.images = np.zeros((capacity,) + tuple(image_dims), np.float32)
        self.size = 0

    def __len__(self):
        return self.size

    @property
    def full(self) -> bool:
        return self.size == self.capacity

    def contents(self) -> np.ndarray:
        return self.images[: self.size]

    def copy(self) -> "HistoryBuffer":
        other = HistoryBuffer(self.capacity, self.images.shape[1:])
        other.images[:] = self.images
        other.size = self.size
        return other


def buffer_update(buffer: HistoryBuffer, refined: np.ndarray, rng: np.random.Generator) -> HistoryBuffer:
    """Append while there is room, otherwise overwrite b/2 random slots. Mutates and returns ``buffer``."""
    b = len(refined)
    if b % 2:
        raise ValueError("batch size must be even")
    if not buffer.full:
        take = min(b, buffer.capacity - buffer.size)
        buffer.images[buffer.size:buffer.size + take] = refined[:take]
        buffer.size += take
    else:
        half = b // 2
        slots = rng.choice(buffer.capacity, size=half, replace=False)
        picks = rng.choice(b, size=half, replace=False)
        buffer.images[slots] = refined[picks]
    return buffer


def disc_batch(buffer: HistoryBuffer, fresh: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """b/2 replayed images from the buffer followed by b/2 fresh refinements."""
    b = len(fresh)
    half = b // 2
    if buffer.size == 0:
        raise ValueError("history buffer is empty")
    replace = buffer.size < half
    if replace:
        log.warning("history buffer holds %d < %d images; sampling with replacement", buffer.size, half)
    old = buffer.images[rng.choice(buffer.size, size=half, replace=replace)]
    new = fresh[rng.choice(b, size=half, replace=False)]
    return np.concatenate([old, new])


# -- networks ----------------------------------------------------------------------

def refine(spec: NetworkSpec, params: NetworkParams, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Apply the refiner; output in [0, 1]."""
    return (predict(spec, params, x, batch_size) + 1) * np.float32(0.5)


@dataclass
class LossRecord:
    iteration: int
    kind: str  # "pretrain", "refiner" or "discriminator"
    loss: float


@dataclass
class RefinerResult:
    refiner: NetworkParams
    discriminator: NetworkParams
    history: list[LossRecord] = field(default_factory=list)
    refiner_spec: NetworkSpec | None = None
    disc_spec: NetworkSpec | None = None


def _check_finite(value: float, what: str, iteration: int):
    if not np.isfinite(value):
        raise FloatingPointError(f"{what} loss became {value} at iteration {iteration}")


def train_refiner(config: GanConfig, synth: np.ndarray, real: np.ndarray, seed: int, progress=None) -> RefinerResult:
    """Two refiner steps per discriminator step, each on a fresh mini-batch."""
    if len(synth) == 0 or len(real) == 0:
        raise ValueError("synthetic and real sets must be non-empty")
    b = config.batch_size
    rspec = refiner_spec(config.width)
    dspec = discriminator_spec(config.width if config.disc_width is None else config.disc_width)
    theta = xavier_init(rspec, seed)
    phi = xavier_init(dspec, seed + 1)
    opt_r, opt_d = AdamState(), AdamState()
    rng = np.random.default_rng(seed)
    buffer = HistoryBuffer(config.buffer_capacity, synth.shape[1:])
    history: list[LossRecord] = []

    def draw(pool):
        return pool[rng.choice(len(pool), size=b, replace=len(pool) < b)]

    # start from a near-identity refiner so the adversary sees plausible images
    for t in range(config.pretrain_iters):
        xb = draw(synth)
        out, rcache = forward(rspec, theta, xb, "train")
        refined = (out + 1) * np.float32(0.5)
        loss = sum(reg_loss(r, x) for r, x in zip(refined, xb))
        _check_finite(loss, "pretrain", t)
        g_theta, _ = backward(rspec, theta, rcache, _reg_grad(refined, xb) * np.float32(0.5), need_input_grad=False)
        theta, opt_r = adam_step(theta, g_theta, opt_r, config.refiner_lr)
        history.append(LossRecord(t, "pretrain", loss))

    for t in range(config.max_iters):
        for _ in range(2):
            xb = draw(synth)
            out, rcache = forward(rspec, theta, xb, "train")
            refined = (out + 1) * np.float32(0.5)
            buffer_update(buffer, refined, rng)
            logits, dcache = forward(dspec, phi, refined, "train")
            loss = refiner_loss(xb, refined, logits, config.lam)
            _check_finite(loss, "refiner", t)
            _, g_img = backward(dspec, phi, dcache, _xent_grad(logits, REAL), need_param_grads=False)
            g_img = g_img + np.float32(config.lam) * _reg_grad(refined, xb)
            g_theta, _ = backward(rspec, theta, rcache, g_img * np.float32(0.5), need_input_grad=False)
            theta, opt_r = adam_step(theta, g_theta, opt_r, config.refiner_lr)
            history.append(LossRecord(t, "refiner", loss))

        xb, yb = draw(synth), draw(real)
        fresh = refine(rspec, theta, xb, b)
        fake = disc_batch(buffer, fresh, rng)
        logits, dcache = forward(dspec, phi, np.concatenate([fake, yb]), "train")
        loss = discriminator_loss(logits[:b], logits[b:])
        _check_finite(loss, "discriminator", t)
        g = np.concatenate([_xent_grad(logits[:b], FAKE), _xent_grad(logits[b:], REAL)])
        g_phi, _ = backward(dspec, phi, dcache, g, need_input_grad=False)
        phi, opt_d = adam_step(phi, g_phi, opt_d, config.disc_lr)
        history.append(LossRecord(t, "discriminator", loss))
        if progress is not None:
            progress(t, history)

    return RefinerResult(theta, phi, history, rspec, dspec)


# -- evaluation ----------------------------------------------------------------------

def probe_separability(
    candidates: np.ndarray,
    real: np.ndarray,
    seed: int,
    width: float = 0.125,
    steps: int = 300,
    batch_size: int = 32,
    lr: float = 1e-3,
    test_fraction: float = 0.25,
) -> float:
    """Held-out accuracy of a freshly trained discriminator telling ``candidates`` from ``real``.

    0.5 means indistinguishable.
    """
    rng = np.random.default_rng(seed)
    spec = discriminator_spec(width)
    phi, opt = xavier_init(spec, seed), AdamState()
    n = min(len(candidates), len(real))
    n_test = max(1, int(round(n * test_fraction)))
    ci, ri = rng.permutation(len(candidates))[:n], rng.permutation(len(real))[:n]
    c_train, c_test = candidates[ci[n_test:]], candidates[ci[:n_test]]
    r_train, r_test = real[ri[n_test:]], real[ri[:n_test]]
    half = batch_size // 2
    for _ in range(steps):
        xa = c_train[rng.choice(len(c_train), half)]
        xr = r_train[rng.choice(len(r_train), half)]
        logits, cache = forward(spec, phi, np.concatenate([xa, xr]), "train")
        g = np.concatenate([_xent_grad(logits[:half], FAKE), _xent_grad(logits[half:], REAL)])
        grads, _ = backward(spec, phi, cache, g, need_input_grad=False)
        phi, opt = adam_step(phi, grads, opt, lr)
    pa = predict(spec, phi, c_test)[:, :, 0, 0].argmax(axis=1)
    pr = predict(spec, phi, r_test)[:, :, 0, 0].argmax(axis=1)
    return float(((pa == FAKE).sum() + (pr == REAL).sum()) / (len(pa) + len(pr)))


@dataclass
class RefinementReport:
    """How far refinement moved the samples and how much closer they came to real."""

    drift: float  # mean per-pixel |R(x) - x|
    raw_probe: float  # probe accuracy, raw synthetic vs real
    refined_probe: float  # probe accuracy, refined vs real
    n_samples: int

    @property
    def gain(self) -> float:
        return self.raw_probe - self.refined_probe

    def write_tsv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["metric", "value"])
            w.writerow(["samples", self.n_samples])
            for name in ("drift", "raw_probe", "refined_probe"):
                w.writerow([name, f"{getattr(self, name):.6f}"])
        return path

    @classmethod
    def read_tsv(cls, path) -> "RefinementReport":
        with open(path, encoding="utf-8") as fh:
            values = dict(list(csv.reader(fh, delimiter="\t"))[1:])
        return cls(float(values["drift"]), float(values["raw_probe"]), float(values["refined_probe"]),
                   int(values["samples"]))


def evaluate_refinement(spec: NetworkSpec, params: NetworkParams, synth: np.ndarray, real: np.ndarray, seed: int,
                        probe_width: float = 0.125, probe_steps: int = 300) -> RefinementReport:
    """Refine held-out ``synth`` and probe it against held-out ``real`` before and after.

    Both probes share the seed, so they see the same split and batch order.
    """
    refined = refine(spec, params, synth)
    drift = float(np.abs(refined.astype(np.float64) - synth).mean())
    raw = probe_separability(synth, real, seed, probe_width, probe_steps)
    ref = probe_separability(refined, real, seed, probe_width, probe_steps)
    return RefinementReport(drift, raw, ref, len(synth))
