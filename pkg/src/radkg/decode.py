"""Decoding strategies: greedy, beam search, top-k and top-p sampling.

All strategies recompute logits from scratch each step. Ties are broken
toward the lowest token id everywhere. Beam search is synchronous: a
hypothesis that emits eos retires into a finished pool and its active
slot is refilled from the remaining candidates of the same step.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from radkg.errors import ConfigError, LengthError
from radkg.model.lm import LmParams, lm_forward
from radkg.tensor import Tensor, no_grad


class Strategy(Enum):
    GREEDY = "greedy"
    BEAM = "beam"
    TOP_K = "top_k"
    TOP_P = "top_p"


@dataclass(frozen=True)
class DecodeConfig:
    strategy: str = Strategy.GREEDY.value
    max_new_tokens: int = 64
    beam_width: int = 4
    length_normalization: bool = False
    k: int = 10
    p: float = 0.9
    seed: int = 0

    def validate(self) -> None:
        Strategy(self.strategy)
        if self.max_new_tokens < 1:
            raise ConfigError("max_new_tokens must be >= 1")
        if self.beam_width < 1:
            raise ConfigError("beam_width must be >= 1")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not 0.0 < self.p <= 1.0:
            raise ConfigError("p must be in (0, 1]")


@dataclass
class Generation:
    """Continuation tokens (eos included when emitted) and their score."""

    token_ids: List[int]
    logprob: float
    stop_reason: str


def _log_softmax(row: np.ndarray) -> np.ndarray:
    shifted = row - row.max()
    return shifted - np.log(np.exp(shifted).sum())


def _last_row(lm: LmParams, ids: Sequence[int], prefix: Optional[Tensor]) -> np.ndarray:
    with no_grad():
        logits = lm_forward(lm, np.asarray(ids, dtype=np.int64), prefix)
    return logits.data[-1]


def _check_budget(lm: LmParams, prompt_len: int, cfg: DecodeConfig, prefix: Optional[Tensor]) -> None:
    k = 0 if prefix is None else prefix.data.shape[0]
    total = k + prompt_len + cfg.max_new_tokens
    if total > lm.cfg.max_seq_len:
        raise LengthError(
            f"prefix {k} + prompt {prompt_len} + max_new_tokens {cfg.max_new_tokens} "
            f"exceeds max_seq_len {lm.cfg.max_seq_len}"
        )
    if prompt_len < 1:
        raise LengthError("prompt must contain at least one token")


def _greedy(lm, prompt, cfg, eos_id, prefix) -> Generation:
    ids = list(prompt)
    out: List[int] = []
    logprob = 0.0
    for _ in range(cfg.max_new_tokens):
        lp = _log_softmax(_last_row(lm, ids, prefix))
        tok = int(np.argmax(lp))
        logprob += float(lp[tok])
        ids.append(tok)
        out.append(tok)
        if tok == eos_id:
            return Generation(out, logprob, "eos")
    return Generation(out, logprob, "length")


def _beam(lm, prompt, cfg, eos_id, prefix) -> Generation:
    active: List[Tuple[List[int], float]] = [(list(prompt), 0.0)]
    finished: List[Tuple[List[int], float]] = []
    prompt_len = len(prompt)

    def norm(score: float, ids: List[int]) -> float:
        if not cfg.length_normalization:
            return score
        return score / max(1, len(ids) - prompt_len)

    for _ in range(cfg.max_new_tokens):
        candidates: List[Tuple[float, int, int]] = []
        for h_idx, (ids, score) in enumerate(active):
            lp = _log_softmax(_last_row(lm, ids, prefix))
            candidates.extend((score + float(lp[v]), h_idx, v) for v in range(lp.size))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        new_active: List[Tuple[List[int], float]] = []
        for total, h_idx, v in candidates:
            if len(new_active) == cfg.beam_width:
                break
            ids = active[h_idx][0] + [v]
            if v == eos_id:
                finished.append((ids, total))
            else:
                new_active.append((ids, total))
        active = new_active
        if not active:
            break
        # scores only decrease, so once the best finished hypothesis
        # beats the best active one nothing better can appear; length
        # normalization can still promote longer continuations, so no
        # pruning in that mode
        if finished and not cfg.length_normalization:
            best_finished = max(score for _, score in finished)
            if best_finished >= active[0][1]:
                break

    # at the length cap an unfinished hypothesis may outscore every
    # finished one; picking the best of both keeps beam >= greedy
    pool = finished + active
    ids, score = max(pool, key=lambda h: norm(h[1], h[0]))
    done = bool(ids) and ids[-1] == eos_id
    return Generation(ids[prompt_len:], score, "eos" if done else "length")


def _sampling_support(probs: np.ndarray, cfg: DecodeConfig) -> np.ndarray:
    order = np.lexsort((np.arange(probs.size), -probs))
    if Strategy(cfg.strategy) is Strategy.TOP_K:
        return order[: min(cfg.k, probs.size)]
    cum = np.cumsum(probs[order])
    cut = int(np.searchsorted(cum, cfg.p, side="left"))
    return order[: min(cut + 1, probs.size)]


def _sample(lm, prompt, cfg, eos_id, prefix) -> Generation:
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    ids = list(prompt)
    out: List[int] = []
    logprob = 0.0
    for _ in range(cfg.max_new_tokens):
        lp = _log_softmax(_last_row(lm, ids, prefix))
        probs = np.exp(lp)
        support = _sampling_support(probs, cfg)
        weights = probs[support]
        weights = weights / weights.sum()
        tok = int(rng.choice(support, p=weights))
        logprob += float(lp[tok])
        ids.append(tok)
        out.append(tok)
        if tok == eos_id:
            return Generation(out, logprob, "eos")
    return Generation(out, logprob, "length")


def generate(
    lm: LmParams,
    prompt_ids: Sequence[int],
    cfg: DecodeConfig,
    eos_id: int,
    prefix: Optional[Tensor] = None,
) -> Generation:
    """Decode one continuation for the prompt under the configured strategy."""
    cfg.validate()
    prompt = [int(t) for t in prompt_ids]
    _check_budget(lm, len(prompt), cfg, prefix)
    strategy = Strategy(cfg.strategy)
    if strategy is Strategy.GREEDY:
        return _greedy(lm, prompt, cfg, eos_id, prefix)
    if strategy is Strategy.BEAM:
        return _beam(lm, prompt, cfg, eos_id, prefix)
    return _sample(lm, prompt, cfg, eos_id, prefix)


def score_sequence(
    lm: LmParams,
    prompt_ids: Sequence[int],
    continuation_ids: Sequence[int],
    prefix: Optional[Tensor] = None,
) -> float:
    """Sum of next-token log-probabilities of the continuation."""
    prompt = [int(t) for t in prompt_ids]
    cont = [int(t) for t in continuation_ids]
    if not prompt:
        raise LengthError("prompt must contain at least one token")
    if not cont:
        raise LengthError("continuation must contain at least one token")
    k = 0 if prefix is None else prefix.data.shape[0]
    total = k + len(prompt) + len(cont)
    if total > lm.cfg.max_seq_len:
        raise LengthError(f"sequence length {total} exceeds max_seq_len {lm.cfg.max_seq_len}")
    with no_grad():
        logits = lm_forward(lm, np.asarray(prompt + cont, dtype=np.int64), prefix)
    rows = logits.data
    score = 0.0
    base = k + len(prompt) - 1
    for i, tok in enumerate(cont):
        score += float(_log_softmax(rows[base + i])[tok])
    return score
