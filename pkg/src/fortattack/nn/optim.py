"""Adam, as a pure function over parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, PoisonedUpdateError


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        arrays = [np.asarray(getattr(p, "data", p)) for p in params]
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    hyper: AdamHyper = AdamHyper(),
) -> tuple[list[np.ndarray], AdamState]:
    """Return updated copies of ``params`` and the next optimizer state.

    Raises PoisonedUpdateError (and leaves everything untouched) if any
    gradient entry is NaN or Inf.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params, grads and optimizer state are not aligned")
    for g in grads:
        if not np.isfinite(g).all():
            raise PoisonedUpdateError("non-finite gradient; update refused")
    t = state.step + 1
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        p = np.asarray(p)
        if p.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        new_params.append(p - hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t)


def global_norm(grads: list[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = [g * scale for g in grads]
    return grads, norm
