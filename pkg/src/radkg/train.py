"""Training regimes and the epoch loop.

Three regimes share one loop: `llm_kg` updates only the LM and ignores
image features entirely, `vlm_kg` updates LM and projector jointly, and
`vlm_kg_frozen` updates only the projector, leaving every LM parameter
bit-identical. Losses are scaled by the window size so K-way gradient
accumulation matches a single large-batch step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from radkg import kernels
from radkg.corpus import EncodedSample
from radkg.errors import ConfigError, EmptyCorpus, MissingFeatures
from radkg.model.lm import LmParams, PrefixedBatch, lm_loss
from radkg.model.params import ParamSet
from radkg.model.projector import ProjectorParams, project
from radkg.optim import (
    AdamState,
    OptimHyper,
    adamw_step,
    clip_gradients,
    global_grad_norm,
    init_adam_state,
    lr_at,
)
from radkg.tensor import backward, no_grad, scale as scale_op


class Regime(Enum):
    LLM_KG = "llm_kg"
    VLM_KG = "vlm_kg"
    VLM_KG_FROZEN = "vlm_kg_frozen"


@dataclass(frozen=True)
class TrainConfig:
    regime: str = Regime.LLM_KG.value
    epochs: int = 5
    batch_size: int = 2
    grad_accum_steps: int = 2
    shuffle_seed: int = 0
    optim: OptimHyper = field(default_factory=OptimHyper)

    def validate(self) -> None:
        Regime(self.regime)
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.grad_accum_steps < 1:
            raise ConfigError("grad_accum_steps must be >= 1")
        self.optim.validate()


@dataclass
class TrainReport:
    """Loss curves and counters; wall time is informational only and
    is excluded from persisted artifacts."""

    regime: str
    steps: int = 0
    epochs: int = 0
    train_losses: List[float] = field(default_factory=list)
    val_losses: List[float] = field(default_factory=list)
    log_rows: List[dict] = field(default_factory=list)
    backend: str = kernels.BACKEND
    wall_time_s: float = 0.0

    @property
    def final_train_loss(self) -> float:
        return self.train_losses[-1] if self.train_losses else float("nan")


def _sample_loss(
    lm: LmParams,
    proj: Optional[ProjectorParams],
    sample: EncodedSample,
    regime: Regime,
):
    prefix = None
    if regime is not Regime.LLM_KG:
        if sample.image_features is None:
            raise MissingFeatures(f"sample {sample.sample_id!r} has no image features")
        prefix = project(proj, sample.image_features)
    return lm_loss(lm, PrefixedBatch(sample.token_ids, sample.loss_mask, prefix))


def _trainable_groups(
    lm: LmParams, proj: Optional[ProjectorParams], regime: Regime
) -> List[Tuple[str, ParamSet]]:
    if regime is Regime.LLM_KG:
        return [("lm", lm.ps)]
    if proj is None:
        raise ConfigError(f"regime {regime.value} needs a projector")
    if regime is Regime.VLM_KG:
        return [("lm", lm.ps), ("projector", proj.ps)]
    return [("projector", proj.ps)]


def mean_loss(
    lm: LmParams,
    proj: Optional[ProjectorParams],
    samples: Sequence[EncodedSample],
    regime: Regime,
) -> float:
    """Mean per-sample loss without touching gradients or parameters."""
    if not samples:
        raise EmptyCorpus("mean_loss over zero samples")
    total = 0.0
    with no_grad():
        for s in samples:
            total += _sample_loss(lm, proj, s, regime).item()
    return total / len(samples)


def train(
    cfg: TrainConfig,
    lm: LmParams,
    proj: Optional[ProjectorParams],
    train_samples: Sequence[EncodedSample],
    val_samples: Sequence[EncodedSample] = (),
    state: Optional[AdamState] = None,
) -> TrainReport:
    """Run the configured regime in place and return the report."""
    cfg.validate()
    regime = Regime(cfg.regime)
    if not train_samples:
        raise EmptyCorpus("no training samples")
    groups = _trainable_groups(lm, proj, regime)

    lm.ps.set_trainable(regime is not Regime.VLM_KG_FROZEN)
    if proj is not None:
        proj.ps.set_trainable(regime is not Regime.LLM_KG)

    if state is None:
        state = init_adam_state(groups)
    report = TrainReport(regime=regime.value)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.shuffle_seed))
    window = cfg.batch_size * cfg.grad_accum_steps
    t0 = time.perf_counter()
    step = 0

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_samples))
        epoch_total = 0.0
        for start in range(0, len(order), window):
            idx = order[start : start + window]
            for _, ps in groups:
                ps.zero_grad()
            window_loss = 0.0
            for i in idx:
                loss = _sample_loss(lm, proj, train_samples[int(i)], regime)
                scaled = scale_op(loss, 1.0 / len(idx))
                backward(scaled)
                window_loss += scaled.item() * len(idx)
            window_mean = window_loss / len(idx)
            epoch_total += window_loss
            step += 1
            lr = lr_at(step, cfg.optim)
            if cfg.optim.clip_norm is not None:
                grad_norm = clip_gradients(groups, cfg.optim.clip_norm)
            else:
                grad_norm = global_grad_norm(groups)
            adamw_step(groups, state, cfg.optim, step, lr=lr)
            report.log_rows.append(
                {
                    "step": step,
                    "epoch": epoch,
                    "lr": lr,
                    "loss": window_mean,
                    "grad_norm": grad_norm,
                }
            )
        report.train_losses.append(epoch_total / len(order))
        if val_samples:
            report.val_losses.append(mean_loss(lm, proj, val_samples, regime))
        report.epochs = epoch + 1
        report.steps = step
    report.wall_time_s = time.perf_counter() - t0
    return report
