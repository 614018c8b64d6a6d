"""RAdam with a step-decay learning rate, acting on one flat parameter vector."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NumericalError


@dataclass(frozen=True)
class OptimState:
    n: int
    base_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_factor: float = 0.9
    decay_every: int = 1000
    clip_grad_norm: float | None = None
    step_count: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            object.__setattr__(self, "m", np.zeros(self.n))
        if self.v is None:
            object.__setattr__(self, "v", np.zeros(self.n))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("n", "base_lr", "beta1", "beta2", "eps", "decay_factor",
                                           "decay_every", "clip_grad_norm", "step_count")}
        d["m"] = [float(x) for x in self.m]
        d["v"] = [float(x) for x in self.v]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OptimState":
        d = dict(d)
        d["m"] = np.array(d["m"], dtype=float)
        d["v"] = np.array(d["v"], dtype=float)
        return cls(**d)


def current_lr(state: OptimState, epoch: int | None = None) -> float:
    """``base_lr * decay_factor ** (epoch // decay_every)``; ``epoch`` defaults to the step count."""
    epoch = state.step_count if epoch is None else epoch
    return state.base_lr * state.decay_factor ** (epoch // state.decay_every)


def step(state: OptimState, params: np.ndarray, grads: np.ndarray):
    """One rectified-Adam update. Returns ``(new_params, new_state)``.

    Until the variance estimate is tractable (rho_t <= 5) the update is plain
    bias-corrected momentum SGD.
    """
    g = np.asarray(grads, dtype=float)
    if g.shape != (state.n,) or np.shape(params) != (state.n,):
        raise ValueError(f"expected vectors of length {state.n}, got {np.shape(params)} and {g.shape}")
    if not np.all(np.isfinite(g)):
        bad = np.flatnonzero(~np.isfinite(g))
        raise NumericalError(f"non-finite gradient at {bad.size} entries (first index {bad[0]})")
    if state.clip_grad_norm is not None:
        norm = float(np.linalg.norm(g))
        if norm > state.clip_grad_norm:
            g = g * (state.clip_grad_norm / norm)

    lr = current_lr(state)
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    m = b1 * state.m + (1 - b1) * g
    v = b2 * state.v + (1 - b2) * g * g
    m_hat = m / (1 - b1 ** t)
    rho_inf = 2 / (1 - b2) - 1
    b2t = b2 ** t
    rho_t = rho_inf - 2 * t * b2t / (1 - b2t)
    p = np.asarray(params, dtype=float)
    if rho_t > 5:
        rect = math.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))
        adaptive = math.sqrt(1 - b2t) / (np.sqrt(v) + state.eps)
        p = p - lr * rect * m_hat * adaptive
    else:
        p = p - lr * m_hat
    return p, replace(state, step_count=t, m=m, v=v)
