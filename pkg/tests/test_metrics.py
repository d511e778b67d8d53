"""BLEU/ROUGE-L against hand cases and independent reference scorers."""

import math
from collections import Counter

import numpy as np
import pytest

from radkg.errors import AlignmentError, ConfigError
from radkg.kg import Entity, EntityLabel, KnowledgeGraph, Relation, Triplet
from radkg.metrics import (
    METRIC_COLUMNS,
    SMOOTH_FLOOR,
    bleu,
    evaluate_corpus,
    format_table,
    report_csv,
    report_row,
    rouge_l,
    samples_csv,
)


# --- independent reference scorers -----------------------------------------


def ref_ngrams(toks, k):
    return Counter(zip(*[toks[i:] for i in range(k)]))


def ref_pair(cand, ref, k):
    cg, rg = ref_ngrams(cand, k), ref_ngrams(ref, k)
    overlap = sum((cg & rg).values())
    return overlap, max(len(cand) - k + 1, 0)


def ref_bp(c, r):
    if c == 0:
        return 0.0
    return 1.0 if c > r else math.exp(1 - r / c)


def ref_bleu_corpus(cands, refs, n):
    num = [0] * n
    den = [0] * n
    for cand, ref in zip(cands, refs):
        for k in range(1, n + 1):
            o, t = ref_pair(cand, ref, k)
            num[k - 1] += o
            den[k - 1] += t
    ps = [num[i] / den[i] if den[i] else 0.0 for i in range(n)]
    bp = ref_bp(sum(map(len, cands)), sum(map(len, refs)))
    if min(ps) <= 0:
        return 0.0
    return bp * math.exp(sum(map(math.log, ps)) / n)


def ref_bleu_sentence(cands, refs, n, smooth):
    total = 0.0
    for cand, ref in zip(cands, refs):
        ps = []
        for k in range(1, n + 1):
            o, t = ref_pair(cand, ref, k)
            p = o / t if t else 0.0
            if smooth and p == 0.0:
                p = SMOOTH_FLOOR
            ps.append(p)
        bp = ref_bp(len(cand), len(ref))
        score = 0.0 if min(ps) <= 0 else bp * math.exp(sum(map(math.log, ps)) / n)
        total += score
    return total / len(cands)


def ref_lcs(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[-1][-1]


def random_pairs(n_pairs, seed, alphabet=6, max_len=12, allow_empty=True):
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pairs):
        lo = 0 if allow_empty else 1
        lc, lr = int(rng.integers(lo, max_len + 1)), int(rng.integers(1, max_len + 1))
        cand = [f"t{v}" for v in rng.integers(0, alphabet, size=lc)]
        ref = [f"t{v}" for v in rng.integers(0, alphabet, size=lr)]
        pairs.append((cand, ref))
    return pairs


# --- BLEU -------------------------------------------------------------------


class TestBleuHandCases:
    def test_perfect_match(self):
        toks = "a b c d e".split()
        res = bleu([toks], [toks])
        assert res.score == 1.0
        assert res.precisions == (1.0, 1.0, 1.0, 1.0)
        assert res.brevity_penalty == 1.0

    def test_brevity_penalty_exponent(self):
        # c=2 < r=3 with perfect unigrams: score = exp(1 - 3/2)
        res = bleu([["a", "b"]], [["a", "b", "c"]], n=1)
        assert abs(res.score - math.exp(-0.5)) < 1e-12
        assert abs(res.brevity_penalty - math.exp(-0.5)) < 1e-12

    def test_clipping(self):
        cand = ["the"] * 7
        ref = "the cat is on the mat".split()
        res = bleu([cand], [ref], n=1)
        assert abs(res.precisions[0] - 2 / 7) < 1e-12

    def test_empty_candidate_scores_zero(self):
        res = bleu([[]], [["a", "b"]], n=1)
        assert res.score == 0.0 and res.brevity_penalty == 0.0

    def test_zero_precision_zeroes_score(self):
        res = bleu([["x", "y", "z", "w", "v"]], [["a", "b", "c", "d", "e"]])
        assert res.score == 0.0

    def test_smoothing_floor_sentence_only(self):
        cand = [["a", "b"]]  # too short for any 4-gram
        ref = [["a", "b"]]
        plain = bleu(cand, ref, mode="sentence")
        smoothed = bleu(cand, ref, mode="sentence", smooth=True)
        assert plain.score == 0.0
        assert 0.0 < smoothed.score < 1.0
        with pytest.raises(ConfigError):
            bleu(cand, ref, mode="corpus", smooth=True)

    def test_corpus_pools_counts(self):
        # one empty and one perfect candidate: corpus pooling is not the
        # mean of per-pair scores
        cands = [[], ["a", "b", "c", "d"]]
        refs = [["q", "r"], ["a", "b", "c", "d"]]
        corpus = bleu(cands, refs)
        sentence = bleu(cands, refs, mode="sentence")
        assert corpus.score != sentence.score

    def test_argument_validation(self):
        with pytest.raises(AlignmentError):
            bleu([["a"]], [])
        with pytest.raises(AlignmentError):
            bleu([], [])
        with pytest.raises(ConfigError):
            bleu([["a"]], [["a"]], n=0)
        with pytest.raises(ConfigError):
            bleu([["a"]], [["a"]], mode="other")


class TestBleuOracle:
    def test_corpus_mode(self):
        pairs = random_pairs(200, seed=1)
        cands, refs = zip(*pairs)
        for n in (1, 2, 3, 4):
            got = bleu(cands, refs, n=n).score
            want = ref_bleu_corpus(cands, refs, n)
            assert abs(got - want) < 1e-9, n

    def test_sentence_mode(self):
        pairs = random_pairs(200, seed=2)
        cands, refs = zip(*pairs)
        for smooth in (False, True):
            got = bleu(cands, refs, n=4, mode="sentence", smooth=smooth).score
            want = ref_bleu_sentence(cands, refs, 4, smooth)
            assert abs(got - want) < 1e-9, smooth


# --- ROUGE-L ----------------------------------------------------------------


class TestRouge:
    def test_hand_case(self):
        cand = "a b c d".split()
        ref = "a c b d".split()
        res = rouge_l(cand, ref)
        assert res.lcs == 3
        p = r = 3 / 4
        b2 = 1.2 * 1.2
        assert abs(res.score - (1 + b2) * r * p / (r + b2 * p)) < 1e-12

    def test_disjoint_and_empty(self):
        assert rouge_l(["a"], ["b"]).score == 0.0
        assert rouge_l([], ["b"]).score == 0.0
        assert rouge_l(["a"], []).score == 0.0

    def test_identical(self):
        toks = "x y z".split()
        res = rouge_l(toks, toks)
        assert res.score == 1.0 and res.lcs == 3

    def test_beta_validation(self):
        with pytest.raises(ConfigError):
            rouge_l(["a"], ["a"], beta=0.0)

    def test_against_reference_dp(self):
        for cand, ref in random_pairs(300, seed=3, alphabet=4, max_len=15):
            if not cand or not ref:
                continue
            res = rouge_l(cand, ref)
            lcs = ref_lcs(cand, ref)
            assert res.lcs == lcs
            if lcs:
                p, r = lcs / len(cand), lcs / len(ref)
                b2 = 1.44
                assert abs(res.score - (1 + b2) * r * p / (r + b2 * p)) < 1e-12


# --- corpus evaluation -------------------------------------------------------


def graph(sid, *pairs):
    trips = [
        Triplet(
            Entity(s, EntityLabel.OBSERVATION_PRESENT),
            Relation.LOCATED_AT,
            Entity(o, EntityLabel.ANATOMY),
        )
        for s, o in pairs
    ]
    return KnowledgeGraph(triplets=trips, source_id=sid)


class TestEvaluateCorpus:
    def test_perfect_predictions(self):
        golds = [graph("a", ("edema", "lung")), graph("b", ("mass", "lobe"))]
        rep = evaluate_corpus(golds, golds)
        assert rep.exact_match_rate == 1.0
        assert rep.percent("em") == 100.0
        assert rep.percent("b4") == 100.0 and rep.percent("rl") == 100.0
        assert rep.hallucinated == rep.missed == 0

    def test_counts_and_alignment_by_id(self):
        golds = [graph("a", ("edema", "lung")), graph("b", ("mass", "lobe"))]
        preds = [
            graph("b", ("mass", "lobe"), ("cyst", "hilum")),  # one extra
            graph("a", ("edema", "lung")),  # order swapped on purpose
        ]
        rep = evaluate_corpus(preds, golds)
        assert rep.correct == 2 and rep.hallucinated == 1 and rep.missed == 0
        assert rep.exact_match_rate == 0.5
        by_id = {s.sample_id: s for s in rep.samples}
        assert by_id["b"].hallucinated == 1 and by_id["a"].exact

    def test_alignment_errors(self):
        golds = [graph("a", ("x", "y"))]
        with pytest.raises(AlignmentError):
            evaluate_corpus([], golds)
        with pytest.raises(AlignmentError):
            evaluate_corpus([graph("zz", ("x", "y"))], golds)
        two = [graph("a", ("x", "y")), graph("a", ("x", "y"))]
        with pytest.raises(AlignmentError):
            evaluate_corpus(two, golds + [graph("b", ("x", "y"))])

    def test_percent_rounding(self):
        golds = [graph(f"s{i}", ("edema", "lung")) for i in range(3)]
        preds = [
            graph("s0", ("edema", "lung")),
            graph("s1", ("mass", "lung")),
            graph("s2", ("mass", "lung")),
        ]
        rep = evaluate_corpus(preds, golds)
        assert rep.percent("em") == round(100 / 3, 2)
        with pytest.raises(KeyError):
            rep.percent("zz")


class TestEmission:
    def test_row_matches_columns(self):
        golds = [graph("a", ("edema", "lung"))]
        rep = evaluate_corpus(golds, golds)
        row = report_row(rep)
        assert len(row) == len(METRIC_COLUMNS) == 5
        assert row == [100.0] * 5

    def test_csv_shapes(self):
        golds = [graph("a", ("edema", "lung"))]
        rep = evaluate_corpus(golds, golds)
        head, row, tail = report_csv(rep).split("\n")
        assert head.split(",")[:5] == ["n_samples", "b1", "b2", "b3", "b4"]
        assert tail == ""
        lines = samples_csv(rep).strip().split("\n")
        assert lines[0] == "id,rouge_l,correct,hallucinated,missed,exact"
        assert lines[1].startswith("a,")

    def test_format_table_alignment(self):
        out = format_table(("col", "x"), [("a", 1.0), ("long", 23.456)])
        lines = out.splitlines()
        assert "23.46" in lines[2]
        assert all(len(line) == len(lines[0]) for line in lines)
        assert lines[1].endswith("1.00")
