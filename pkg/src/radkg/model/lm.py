"""Decoder-only language model over token ids with an optional prefix.

Positions are learned and cover the prefix rows too: a k-row prefix
shifts every token to position k + t. The output head is a separate
matrix; embeddings are not tied.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from radkg.errors import ConfigError, EmptyMask, LengthError
from radkg.model.params import ParamSet
from radkg.model.transformer import INIT_STD, init_stack, run_stack, stack_param_count
from radkg.tensor import Tensor, add, concat_rows, cross_entropy_masked, embedding_lookup, matmul, slice_rows


@dataclass(frozen=True)
class LmConfig:
    vocab_size: int
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 512
    max_seq_len: int = 512
    ln_eps: float = 1e-5
    seed: int = 0

    def validate(self) -> None:
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be >= 1")
        for name in ("d_model", "n_layers", "n_heads", "d_ff", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.ln_eps <= 0.0:
            raise ConfigError("ln_eps must be positive")


@dataclass
class LmParams:
    cfg: LmConfig
    ps: ParamSet


@dataclass
class PrefixedBatch:
    """One training item: token ids, loss mask, optional prefix rows."""

    token_ids: np.ndarray
    loss_mask: np.ndarray
    prefix: Optional[Tensor] = None


def init_lm(cfg: LmConfig) -> LmParams:
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    ps = ParamSet()
    ps.add("tok_emb", rng.normal(0.0, INIT_STD, (cfg.vocab_size, cfg.d_model)), decay=True)
    ps.add("pos_emb", rng.normal(0.0, INIT_STD, (cfg.max_seq_len, cfg.d_model)), decay=True)
    init_stack(ps, rng, cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.d_ff)
    ps.add("out_w", rng.normal(0.0, INIT_STD, (cfg.d_model, cfg.vocab_size)), decay=True)
    ps.add("out_b", np.zeros(cfg.vocab_size), decay=False)
    return LmParams(cfg, ps)


def lm_param_count(cfg: LmConfig) -> int:
    emb = cfg.vocab_size * cfg.d_model + cfg.max_seq_len * cfg.d_model
    head = cfg.d_model * cfg.vocab_size + cfg.vocab_size
    return emb + stack_param_count(cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.d_ff) + head


def lm_forward(lm: LmParams, token_ids: np.ndarray, prefix: Optional[Tensor] = None) -> Tensor:
    """Logits over the full sequence (prefix rows included), [k+L, V]."""
    token_ids = np.asarray(token_ids, dtype=np.int64)
    if token_ids.ndim != 1 or token_ids.size == 0:
        raise LengthError(f"token_ids must be a non-empty 1-D array, got shape {token_ids.shape}")
    k = 0
    if prefix is not None:
        if prefix.data.ndim != 2 or prefix.data.shape[1] != lm.cfg.d_model:
            raise LengthError(
                f"prefix shape {prefix.data.shape} does not match d_model {lm.cfg.d_model}"
            )
        k = prefix.data.shape[0]
    total = k + token_ids.size
    if total > lm.cfg.max_seq_len:
        raise LengthError(f"sequence length {total} exceeds max_seq_len {lm.cfg.max_seq_len}")
    x = embedding_lookup(lm.ps["tok_emb"], token_ids)
    if prefix is not None and k > 0:
        x = concat_rows(prefix, x)
    pos = slice_rows(lm.ps["pos_emb"], 0, total)
    x = add(x, pos)
    x = run_stack(lm.ps, x, lm.cfg.n_layers, lm.cfg.n_heads, causal=True, ln_eps=lm.cfg.ln_eps)
    return add(matmul(x, lm.ps["out_w"]), lm.ps["out_b"])


def lm_loss(lm: LmParams, batch: PrefixedBatch) -> Tensor:
    """Masked mean next-token cross entropy for one sequence.

    Position t of the combined sequence predicts position t+1; targets
    landing on prefix rows or masked-off token positions contribute
    nothing. The prefix itself is never a prediction target.
    """
    ids = np.asarray(batch.token_ids, dtype=np.int64)
    mask = np.asarray(batch.loss_mask, dtype=bool)
    if mask.shape != ids.shape:
        raise LengthError(f"loss_mask shape {mask.shape} does not match ids {ids.shape}")
    if not mask.any():
        raise EmptyMask("loss mask selects no positions")
    logits = lm_forward(lm, ids, batch.prefix)
    s = logits.data.shape[0]
    k = s - ids.size
    labels_full = np.zeros(s - 1, dtype=np.int64)
    mask_full = np.zeros(s - 1, dtype=bool)
    for t in range(s - 1):
        j = t + 1 - k
        if j >= 0:
            labels_full[t] = ids[j]
            mask_full[t] = mask[j]
    return cross_entropy_masked(slice_rows(logits, 0, s - 1), labels_full, mask_full)
