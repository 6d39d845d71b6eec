"""Adaptive-gradient optimizers (YOGI and Adam) over named parameter maps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import NonFiniteError, Tensor

VARIANTS = ("yogi", "adam")


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor], **hyper) -> "OptimizerState":
        state = cls(**hyper)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def global_grad_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(np.sum([np.sum(np.square(g, dtype=np.float64)) for g in grads.values()])))


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their global norm is at most ``max_norm``; returns the pre-clip norm."""
    total = global_grad_norm(grads)
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for name in grads:
            grads[name] = grads[name] * scale
    return total


def optimizer_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    variant: str = "yogi",
) -> None:
    """Apply one bias-corrected YOGI or Adam update in place.

    YOGI replaces Adam's exponential average of ``g**2`` with the additive
    update ``v -= (1 - beta2) * sign(v - g**2) * g**2`` (Zaheer et al., 2018).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown optimizer variant {variant!r}; expected one of {VARIANTS}")
    missing = set(params) - set(grads)
    if missing:
        raise KeyError(f"no gradient for parameter(s): {sorted(missing)}")
    bad = [name for name, g in grads.items() if not np.isfinite(g).all()]
    if bad:
        raise NonFiniteError(f"non-finite gradient in {bad}; step {state.step + 1} aborted")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        g2 = g * g
        m *= b1
        m += (1.0 - b1) * g
        if variant == "adam":
            v *= b2
            v += (1.0 - b2) * g2
        else:
            v -= (1.0 - b2) * np.sign(v - g2) * g2
        update = state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        p.data = (p.data - update).astype(p.data.dtype, copy=False)
