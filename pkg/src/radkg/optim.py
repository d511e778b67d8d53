"""AdamW with decoupled weight decay, warmup schedule, gradient clipping.

Decay applies only to parameters registered with a decay flag (weight
matrices and embeddings); layer-norm parameters, biases, and the
projector's prefix constant are exempt. Optimizer state lives in a
plain dict keyed by parameter name so checkpoints can carry it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from radkg import kernels
from radkg.errors import ConfigError, NonFiniteGradient
from radkg.model.params import ParamSet


@dataclass(frozen=True)
class OptimHyper:
    lr_peak: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_steps: int = 0
    clip_norm: Optional[float] = 1.0

    def validate(self) -> None:
        if self.lr_peak <= 0.0:
            raise ConfigError("lr_peak must be positive")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError("betas must be in [0, 1)")
        if self.eps <= 0.0:
            raise ConfigError("eps must be positive")
        if self.weight_decay < 0.0:
            raise ConfigError("weight_decay must be >= 0")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        if self.clip_norm is not None and self.clip_norm <= 0.0:
            raise ConfigError("clip_norm must be positive or None")


def lr_at(step: int, hyper: OptimHyper) -> float:
    """Linear warmup to lr_peak, then constant. `step` is 1-based."""
    if step < 1:
        raise ConfigError(f"step must be >= 1, got {step}")
    if hyper.warmup_steps == 0 or step >= hyper.warmup_steps:
        return hyper.lr_peak
    return hyper.lr_peak * step / hyper.warmup_steps


AdamState = Dict[str, Tuple[np.ndarray, np.ndarray]]


def init_adam_state(groups: List[Tuple[str, ParamSet]]) -> AdamState:
    state: AdamState = {}
    for group_name, ps in groups:
        for name, t in ps.items():
            key = f"{group_name}.{name}"
            state[key] = (np.zeros_like(t.data), np.zeros_like(t.data))
    return state


def global_grad_norm(groups: List[Tuple[str, ParamSet]]) -> float:
    total = 0.0
    for _, ps in groups:
        for _, t in ps.items():
            if t.grad is not None:
                total += float((t.grad * t.grad).sum())
    return math.sqrt(total)


def clip_gradients(groups: List[Tuple[str, ParamSet]], clip_norm: float) -> float:
    """Scale all grads so their global norm is at most clip_norm."""
    norm = global_grad_norm(groups)
    if norm > clip_norm:
        factor = clip_norm / norm
        for _, ps in groups:
            for _, t in ps.items():
                if t.grad is not None:
                    t.grad *= factor
    return norm


def adamw_step(
    groups: List[Tuple[str, ParamSet]],
    state: AdamState,
    hyper: OptimHyper,
    step: int,
    lr: Optional[float] = None,
) -> None:
    """Apply one update in place. `step` is the 1-based step count.

    Every parameter in the groups must carry a gradient; non-finite
    gradients abort before any parameter is touched.
    """
    if step < 1:
        raise ConfigError(f"step must be >= 1, got {step}")
    if lr is None:
        lr = hyper.lr_peak
    for group_name, ps in groups:
        for name, t in ps.items():
            if t.data.size == 0:
                continue
            if t.grad is None:
                raise NonFiniteGradient(f"parameter {group_name}.{name} has no gradient")
            if not np.all(np.isfinite(t.grad)):
                raise NonFiniteGradient(f"non-finite gradient in {group_name}.{name}")
    bc1 = 1.0 - hyper.beta1**step
    bc2 = 1.0 - hyper.beta2**step
    for group_name, ps in groups:
        for name, t in ps.items():
            if t.data.size == 0:
                continue
            key = f"{group_name}.{name}"
            m, v = state[key]
            wd = hyper.weight_decay if ps.decays(name) else 0.0
            kernels.adamw_update(
                t.data.reshape(-1),
                np.ascontiguousarray(t.grad.reshape(-1)),
                m.reshape(-1),
                v.reshape(-1),
                float(lr),
                hyper.beta1,
                hyper.beta2,
                hyper.eps,
                wd,
                bc1,
                bc2,
            )
