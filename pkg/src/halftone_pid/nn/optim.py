from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import NetworkParams, Params


@dataclass
class AdamState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: NetworkParams, grads: Params, state: AdamState, lr: float):
    """One bias-corrected Adam update. Returns new ``(params, state)``.

    Entries without a gradient (batch-norm running statistics) are carried
    over untouched.
    """
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new = dict(params.entries)
    m_new, v_new = dict(state.m), dict(state.v)
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has dims {g.shape}, parameter has {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new[name] = (p - lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)
        m_new[name], v_new[name] = m.astype(p.dtype), v.astype(p.dtype)
    return NetworkParams(new, params.rng_seed), AdamState(m_new, v_new, t, b1, b2, state.eps)


class EarlyStopping:
    """Tracks the best score and signals a stop after ``patience`` epochs without a strict improvement.

    Ties keep the earlier epoch. ``mode`` is "max" (accuracy) or "min" (loss).
    """

    def __init__(self, patience: int, mode: str = "max"):
        if patience < 1:
            raise ValueError("patience must be positive")
        if mode not in ("max", "min"):
            raise ValueError(f"mode must be 'max' or 'min', got {mode!r}")
        self.patience = patience
        self.sign = 1.0 if mode == "max" else -1.0
        self.best = None
        self.best_epoch = 0
        self.epoch = 0
        self.waited = 0

    def update(self, score: float) -> bool:
        """Record the next epoch's score; returns True when this epoch improved on the best."""
        self.epoch += 1
        if self.best is None or self.sign * score > self.sign * self.best:
            self.best, self.best_epoch, self.waited = score, self.epoch, 0
            return True
        self.waited += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.waited >= self.patience
