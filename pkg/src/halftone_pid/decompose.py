"""Learned CMYK decomposition of halftone RGB patches.

A stride-1 conv stack (HCD network) regresses the four toner coverage planes
from a 64x64 RGB patch. It is scored against the textbook profile inversion
with per-channel PSNR and SSIM.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .halftone import CHANNELS, naive_profile_decompose
from .metrics import psnr, ssim
from .nn import (
    AdamState,
    EarlyStopping,
    NetworkParams,
    NetworkSpec,
    adam_step,
    apply_running_stats,
    backward,
    forward,
    hcd_spec,
    predict,
    xavier_init,
)


@dataclass
class HcdConfig:
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    width: float = 1.0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch size, epochs and patience must be positive")


def euclidean_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Sum of squared differences over the batch, divided by 2N."""
    pred, target = np.asarray(pred, np.float64), np.asarray(target, np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"dims differ: {pred.shape} vs {target.shape}")
    return float(np.sum((pred - target) ** 2) / (2 * len(pred)))


def euclidean_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    return ((pred - target) / len(pred)).astype(pred.dtype)


def split_by_hash(keys, val_fraction: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic train/validation split from a CRC of each sample key.

    Always leaves at least one sample on each side when there are two or more.
    """
    keys = [str(k) for k in keys]
    buckets = np.array([zlib.crc32(k.encode("utf-8")) % 10_000 for k in keys])
    val = buckets < val_fraction * 10_000
    if len(keys) >= 2 and not val.any():
        val[int(np.argmin(buckets))] = True
    if len(keys) >= 2 and val.all():
        val[int(np.argmax(buckets))] = False
    idx = np.arange(len(keys))
    return idx[~val], idx[val]


@dataclass
class HcdResult:
    params: NetworkParams
    spec: NetworkSpec
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0


def _val_loss(spec, params, rgb, cmyk, batch_size) -> float:
    pred = predict(spec, params, rgb, batch_size)
    return euclidean_loss(pred, cmyk)


def train_hcd(
    config: HcdConfig,
    rgb: np.ndarray,
    cmyk: np.ndarray,
    seed: int,
    keys=None,
    progress=None,
) -> HcdResult:
    """Adam on the Euclidean loss with early stopping on validation loss.

    ``keys`` name the samples for the hash split (defaults to their indices).
    Returns the parameters from the epoch with the lowest validation loss.
    """
    if len(rgb) != len(cmyk):
        raise ValueError("rgb and cmyk sets differ in length")
    if len(rgb) < 2:
        raise ValueError("need at least two samples for a train/validation split")
    keys = list(range(len(rgb))) if keys is None else list(keys)
    tr, va = split_by_hash(keys, config.val_fraction)
    spec = hcd_spec(config.width)
    params = xavier_init(spec, seed)
    opt = AdamState()
    rng = np.random.default_rng(seed)
    result = HcdResult(params, spec)
    best, stopper = params, EarlyStopping(config.patience, "min")
    b = config.batch_size
    for epoch in range(config.max_epochs):
        order = rng.permutation(tr)
        total = 0.0
        for start in range(0, len(order), b):
            sel = np.sort(order[start:start + b])
            x, y = rgb[sel], cmyk[sel]
            out, cache = forward(spec, params, x, "train")
            loss = euclidean_loss(out, y)
            if not np.isfinite(loss):
                raise FloatingPointError(f"HCD loss became {loss} in epoch {epoch + 1}")
            grads, _ = backward(spec, params, cache, euclidean_grad(out, y), need_input_grad=False)
            params, opt = adam_step(params, grads, opt, config.lr)
            params = apply_running_stats(params, cache)
            total += loss * len(sel)
        result.train_loss.append(total / len(tr))
        vloss = _val_loss(spec, params, rgb[va], cmyk[va], b)
        if not np.isfinite(vloss):
            raise FloatingPointError(f"HCD validation loss became {vloss} in epoch {epoch + 1}")
        result.val_loss.append(vloss)
        if progress is not None:
            progress(epoch + 1, result)
        if stopper.update(vloss):
            best = params
            result.best_epoch = stopper.best_epoch
        elif stopper.should_stop:
            break
    result.params = best
    return result


def decompose(spec: NetworkSpec, params: NetworkParams, rgb: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Eval-mode HCD forward; planes in C, M, Y, K order, unclamped."""
    return predict(spec, params, rgb, batch_size)


@dataclass
class DecompositionReport:
    """Mean per-channel PSNR (dB) and SSIM, keyed ``[method][channel]``."""

    psnr: dict[str, dict[str, float]]
    ssim: dict[str, dict[str, float]]
    n_samples: int

    METHODS = ("hcd", "baseline")

    def rows(self) -> list[list[str]]:
        header = ["channel"] + [f"{m}_{k}" for m in self.METHODS for k in ("psnr", "ssim")]
        out = [header]
        for ch in CHANNELS:
            row = [ch]
            for m in self.METHODS:
                row += [f"{self.psnr[m][ch]:.6f}", f"{self.ssim[m][ch]:.6f}"]
            out.append(row)
        return out

    def write_tsv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["# samples", self.n_samples])
            w.writerows(self.rows())
        return path

    @classmethod
    def read_tsv(cls, path) -> "DecompositionReport":
        with open(path, encoding="utf-8") as fh:
            rows = list(csv.reader(fh, delimiter="\t"))
        n = int(rows[0][1])
        header = rows[1]
        ps = {m: {} for m in cls.METHODS}
        ss = {m: {} for m in cls.METHODS}
        for row in rows[2:]:
            for col, val in zip(header[1:], row[1:]):
                method, metric = col.rsplit("_", 1)
                (ps if metric == "psnr" else ss)[method][row[0]] = float(val)
        return cls(ps, ss, n)


def evaluate_decomposition(spec: NetworkSpec, params: NetworkParams, rgb: np.ndarray, cmyk: np.ndarray) -> DecompositionReport:
    """Compare HCD output and the profile baseline against ground-truth planes.

    Both predictions are clamped to [0, 1] before scoring.
    """
    if len(rgb) == 0:
        raise ValueError("evaluation set is empty")
    if len(rgb) != len(cmyk):
        raise ValueError("rgb and cmyk sets differ in length")
    preds = {
        "hcd": np.clip(decompose(spec, params, rgb), 0, 1),
        "baseline": np.clip(naive_profile_decompose(rgb), 0, 1),
    }
    ps = {m: {} for m in DecompositionReport.METHODS}
    ss = {m: {} for m in DecompositionReport.METHODS}
    for m, pred in preds.items():
        for c, ch in enumerate(CHANNELS):
            ps[m][ch] = float(np.mean([psnr(p[c], t[c]) for p, t in zip(pred, cmyk)]))
            ss[m][ch] = float(np.mean([ssim(p[c], t[c]) for p, t in zip(pred, cmyk)]))
    return DecompositionReport(ps, ss, len(rgb))
