"""Ablation harnesses: projector geometry, decode budget, freezing.

Each harness returns (headers, rows) ready for the table and CSV
emitters, with the metric columns always ordered B1, B2, B3, B4, RL.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Dict, List, Sequence, Tuple

from radkg import corpus as corpus_mod
from radkg.metrics import METRIC_COLUMNS, report_row
from radkg.model.projector import count_params
from radkg.pipeline import (
    ExperimentConfig,
    ExperimentResult,
    compare_regimes,
    predict_graphs,
    run_regime,
    split_corpus,
)
from radkg.metrics import evaluate_corpus

PROJECTOR_GRID: Tuple[Tuple[int, int], ...] = ((64, 64), (128, 64), (64, 128), (128, 128))
LENGTH_BUDGETS: Tuple[int, ...] = (200, 256, 300, 512)
FREEZE_REGIMES: Tuple[str, ...] = ("llm_kg", "vlm_kg", "vlm_kg_frozen")


def ablate_projector(
    cfg: ExperimentConfig, grid: Sequence[Tuple[int, int]] = PROJECTOR_GRID
) -> Tuple[List[str], List[List]]:
    """Sweep (clip_length, prefix_length); one training run per cell."""
    headers = ["clip_len", "prefix_len", "params", *METRIC_COLUMNS]
    samples = corpus_mod.gen_synthetic(cfg.synth)
    train_split, eval_split = split_corpus(samples, cfg.eval_fraction)
    vocab = corpus_mod.build_vocab(samples, cfg.template)
    rows: List[List] = []
    for k, n in grid:
        cell = replace(cfg, projector=replace(cfg.projector, clip_length=k, prefix_length=n))
        result = run_regime(cell, train_split, eval_split, vocab)
        n_params = count_params(result.proj.cfg)
        rows.append([k, n, n_params, *report_row(result.eval_report)])
    return headers, rows


def ablate_length(
    cfg: ExperimentConfig, budgets: Sequence[int] = LENGTH_BUDGETS
) -> Tuple[List[str], List[List]]:
    """Train once, then re-decode the eval split per token budget."""
    headers = ["max_new_tokens", *METRIC_COLUMNS]
    result = run_experiment_once(cfg)
    rows: List[List] = []
    for budget in budgets:
        decode_cfg = replace(cfg.decode, max_new_tokens=budget)
        preds, _, _ = predict_graphs(
            result.lm, result.proj, result.eval_samples, result.vocab, decode_cfg, cfg.template
        )
        golds = [s.output_triplets for s in result.eval_samples]
        rows.append([budget, *report_row(evaluate_corpus(preds, golds))])
    return headers, rows


def run_experiment_once(cfg: ExperimentConfig) -> ExperimentResult:
    samples = corpus_mod.gen_synthetic(cfg.synth)
    train_split, eval_split = split_corpus(samples, cfg.eval_fraction)
    vocab = corpus_mod.build_vocab(samples, cfg.template)
    return run_regime(cfg, train_split, eval_split, vocab)


def ablate_freeze(
    cfg: ExperimentConfig, regimes: Sequence[str] = FREEZE_REGIMES
) -> Tuple[List[str], List[List], Dict[str, ExperimentResult]]:
    """Compare regimes from one shared initialization on one corpus."""
    headers = ["regime", "EM", *METRIC_COLUMNS]
    results = compare_regimes(cfg, regimes)
    rows: List[List] = []
    for regime in regimes:
        rep = results[regime].eval_report
        rows.append([regime, rep.percent("em"), *report_row(rep)])
    return headers, rows, results
