"""Exact-match text metrics over serialized graphs: BLEU, ROUGE-L.

Candidates and references are token lists from the spaced metric form
of a graph. Corpus BLEU aggregates clipped n-gram counts and lengths
over all pairs before taking precisions; sentence BLEU averages
per-pair scores and only that mode honors the smoothing floor. A zero
precision without smoothing zeroes the score.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from radkg import kernels
from radkg.errors import AlignmentError, ConfigError
from radkg.kg import DiffReport, KnowledgeGraph, kg_diff, to_metric_string

import numpy as np

SMOOTH_FLOOR = 1e-9


@dataclass(frozen=True)
class BleuResult:
    score: float
    precisions: Tuple[float, ...]
    brevity_penalty: float
    candidate_len: int
    reference_len: int
    mode: str


@dataclass(frozen=True)
class RougeResult:
    score: float
    lcs: int
    precision: float
    recall: float
    beta: float


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _pair_stats(cand: Sequence[str], ref: Sequence[str], n: int) -> Tuple[int, int]:
    cc = _ngram_counts(cand, n)
    rc = _ngram_counts(ref, n)
    clipped = sum(min(count, rc[gram]) for gram, count in cc.items())
    return clipped, max(0, len(cand) - n + 1)


def _geo_mean_score(precisions: Sequence[float], bp: float) -> float:
    if any(p <= 0.0 for p in precisions):
        return 0.0
    return bp * math.exp(sum(math.log(p) for p in precisions) / len(precisions))


def _brevity_penalty(c: int, r: int) -> float:
    if c == 0:
        return 0.0
    if c > r:
        return 1.0
    return math.exp(1.0 - r / c)


def bleu(
    candidates: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    n: int = 4,
    mode: str = "corpus",
    smooth: bool = False,
) -> BleuResult:
    """BLEU-n over aligned candidate/reference token lists."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    if mode not in ("corpus", "sentence"):
        raise ConfigError(f"mode must be 'corpus' or 'sentence', got {mode!r}")
    if len(candidates) != len(references):
        raise AlignmentError(
            f"{len(candidates)} candidates vs {len(references)} references"
        )
    if not candidates:
        raise AlignmentError("bleu needs at least one pair")
    if smooth and mode == "corpus":
        raise ConfigError("the smoothing floor applies to sentence mode only")

    if mode == "corpus":
        clipped = [0] * n
        total = [0] * n
        c_len = 0
        r_len = 0
        for cand, ref in zip(candidates, references):
            c_len += len(cand)
            r_len += len(ref)
            for order in range(1, n + 1):
                cl, tt = _pair_stats(cand, ref, order)
                clipped[order - 1] += cl
                total[order - 1] += tt
        precisions = tuple(
            (clipped[i] / total[i]) if total[i] > 0 else 0.0 for i in range(n)
        )
        bp = _brevity_penalty(c_len, r_len)
        return BleuResult(_geo_mean_score(precisions, bp), precisions, bp, c_len, r_len, mode)

    scores = []
    prec_sums = [0.0] * n
    bp_sum = 0.0
    c_len = 0
    r_len = 0
    for cand, ref in zip(candidates, references):
        c_len += len(cand)
        r_len += len(ref)
        precisions = []
        for order in range(1, n + 1):
            cl, tt = _pair_stats(cand, ref, order)
            p = (cl / tt) if tt > 0 else 0.0
            if smooth and p == 0.0:
                p = SMOOTH_FLOOR
            precisions.append(p)
        bp = _brevity_penalty(len(cand), len(ref))
        bp_sum += bp
        for i, p in enumerate(precisions):
            prec_sums[i] += p
        scores.append(_geo_mean_score(precisions, bp))
    m = len(scores)
    return BleuResult(
        sum(scores) / m,
        tuple(s / m for s in prec_sums),
        bp_sum / m,
        c_len,
        r_len,
        mode,
    )


def rouge_l(
    candidate: Sequence[str], reference: Sequence[str], beta: float = 1.2
) -> RougeResult:
    """LCS-based F-score: (1 + b^2) R P / (R + b^2 P)."""
    if beta <= 0.0:
        raise ConfigError("beta must be positive")
    if not candidate or not reference:
        return RougeResult(0.0, 0, 0.0, 0.0, beta)
    interned: Dict[str, int] = {}

    def ids(tokens: Sequence[str]) -> np.ndarray:
        return np.array(
            [interned.setdefault(t, len(interned)) for t in tokens], dtype=np.int32
        )

    lcs = int(kernels.lcs_length(ids(candidate), ids(reference)))
    if lcs == 0:
        return RougeResult(0.0, 0, 0.0, 0.0, beta)
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    b2 = beta * beta
    score = (1.0 + b2) * recall * precision / (recall + b2 * precision)
    return RougeResult(score, lcs, precision, recall, beta)


@dataclass(frozen=True)
class SampleEval:
    sample_id: str
    rouge_l: float
    correct: int
    hallucinated: int
    missed: int
    exact: bool


@dataclass
class EvalReport:
    """Aggregate metrics over an aligned prediction/gold corpus.

    Scores are stored as fractions; the emission helpers scale to
    percentages with two decimals.
    """

    n_samples: int
    bleu: Dict[int, BleuResult]
    rouge_mean: float
    exact_match_rate: float
    correct: int
    hallucinated: int
    missed: int
    samples: List[SampleEval] = field(default_factory=list)

    def percent(self, key: str) -> float:
        if key.startswith("b") and key[1:].isdigit():
            return round(self.bleu[int(key[1:])].score * 100.0, 2)
        if key == "rl":
            return round(self.rouge_mean * 100.0, 2)
        if key == "em":
            return round(self.exact_match_rate * 100.0, 2)
        raise KeyError(key)


def evaluate_corpus(
    predictions: Sequence[KnowledgeGraph],
    golds: Sequence[KnowledgeGraph],
    beta: float = 1.2,
    bleu_mode: str = "corpus",
    max_n: int = 4,
    smooth: bool = False,
) -> EvalReport:
    """Score predictions against golds aligned by source_id."""
    if len(predictions) != len(golds):
        raise AlignmentError(f"{len(predictions)} predictions vs {len(golds)} golds")
    if not golds:
        raise AlignmentError("evaluate_corpus needs at least one pair")
    by_id = {p.source_id: p for p in predictions}
    if len(by_id) != len(predictions):
        raise AlignmentError("duplicate prediction source_ids")
    cands: List[List[str]] = []
    refs: List[List[str]] = []
    sample_rows: List[SampleEval] = []
    rouge_total = 0.0
    exact = 0
    tot_correct = tot_hall = tot_miss = 0
    for gold in golds:
        pred = by_id.pop(gold.source_id, None)
        if pred is None:
            raise AlignmentError(f"no prediction for sample {gold.source_id!r}")
        cand = to_metric_string(pred).split()
        ref = to_metric_string(gold).split()
        cands.append(cand)
        refs.append(ref)
        rr = rouge_l(cand, ref, beta)
        rouge_total += rr.score
        diff: DiffReport = kg_diff(pred, gold)
        c, h, m = len(diff.correct), len(diff.hallucinated), len(diff.missed)
        is_exact = h == 0 and m == 0
        exact += int(is_exact)
        tot_correct += c
        tot_hall += h
        tot_miss += m
        sample_rows.append(SampleEval(gold.source_id, rr.score, c, h, m, is_exact))
    if by_id:
        raise AlignmentError(f"predictions without golds: {sorted(by_id)}")
    bleu_by_n = {
        k: bleu(cands, refs, n=k, mode=bleu_mode, smooth=smooth) for k in range(1, max_n + 1)
    }
    n = len(golds)
    return EvalReport(
        n_samples=n,
        bleu=bleu_by_n,
        rouge_mean=rouge_total / n,
        exact_match_rate=exact / n,
        correct=tot_correct,
        hallucinated=tot_hall,
        missed=tot_miss,
        samples=sample_rows,
    )


METRIC_COLUMNS = ("B1", "B2", "B3", "B4", "RL")


def report_row(report: EvalReport) -> List[float]:
    """The five headline numbers in fixed column order."""
    return [
        report.percent("b1"),
        report.percent("b2"),
        report.percent("b3"),
        report.percent("b4"),
        report.percent("rl"),
    ]


def report_csv(report: EvalReport) -> str:
    head = "n_samples,b1,b2,b3,b4,rouge_l,exact_match,correct,hallucinated,missed"
    row = report_row(report)
    values = [
        str(report.n_samples),
        *(f"{v:.2f}" for v in row),
        f"{report.percent('em'):.2f}",
        str(report.correct),
        str(report.hallucinated),
        str(report.missed),
    ]
    return head + "\n" + ",".join(values) + "\n"


def samples_csv(report: EvalReport) -> str:
    lines = ["id,rouge_l,correct,hallucinated,missed,exact"]
    for s in report.samples:
        lines.append(
            f"{s.sample_id},{s.rouge_l * 100.0:.2f},{s.correct},{s.hallucinated},"
            f"{s.missed},{int(s.exact)}"
        )
    return "\n".join(lines) + "\n"


def format_table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Right-aligned text table; floats render with two decimals."""

    def fmt(v) -> str:
        if isinstance(v, float):
            return f"{v:.2f}"
        return str(v)

    all_rows = [list(headers)] + [[fmt(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in all_rows) for i in range(len(headers))]
    out = []
    for r in all_rows:
        out.append("  ".join(cell.rjust(widths[i]) for i, cell in enumerate(r)))
    return "\n".join(out) + "\n"
