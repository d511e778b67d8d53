"""End-to-end experiment runner: corpus, train, generate, evaluate.

One config bundle drives the whole loop so the CLI harnesses and the
regime-comparison tests all exercise identical code. The eval split is
the deterministic tail of the generated corpus.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from radkg import corpus as corpus_mod
from radkg.corpus import (
    DEFAULT_TEMPLATE,
    EOS_ID,
    EncodedSample,
    InstructionSample,
    SynthConfig,
    Vocab,
)
from radkg.decode import DecodeConfig, generate
from radkg.errors import ConfigError
from radkg.kg import KnowledgeGraph, parse_triplets
from radkg.metrics import EvalReport, evaluate_corpus
from radkg.model.lm import LmConfig, LmParams, init_lm
from radkg.model.projector import ProjectorConfig, ProjectorParams, init_projector, project
from radkg.train import Regime, TrainConfig, TrainReport, train


@dataclass(frozen=True)
class ExperimentConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    lm: LmConfig = field(default_factory=lambda: LmConfig(vocab_size=0))
    projector: ProjectorConfig = field(default_factory=ProjectorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    template: str = DEFAULT_TEMPLATE
    eval_fraction: float = 0.25

    def validate(self) -> None:
        if not 0.0 < self.eval_fraction < 1.0:
            raise ConfigError("eval_fraction must be in (0, 1)")


@dataclass
class ExperimentResult:
    lm: LmParams
    proj: Optional[ProjectorParams]
    vocab: Vocab
    train_report: TrainReport
    eval_report: EvalReport
    predictions: List[KnowledgeGraph]
    skipped_fragments: int
    train_samples: List[InstructionSample]
    eval_samples: List[InstructionSample]


def split_corpus(
    samples: Sequence[InstructionSample], eval_fraction: float
) -> Tuple[List[InstructionSample], List[InstructionSample]]:
    n_eval = max(1, round(len(samples) * eval_fraction))
    if n_eval >= len(samples):
        raise ConfigError("eval split would consume the whole corpus")
    return list(samples[:-n_eval]), list(samples[-n_eval:])


def predict_graphs(
    lm: LmParams,
    proj: Optional[ProjectorParams],
    samples: Sequence[InstructionSample],
    vocab: Vocab,
    decode_cfg: DecodeConfig,
    template: str = DEFAULT_TEMPLATE,
    use_prefix: bool = True,
) -> Tuple[List[KnowledgeGraph], int, List[str]]:
    """Decode every sample and parse the output segment into graphs."""
    preds: List[KnowledgeGraph] = []
    skipped = 0
    texts: List[str] = []
    for s in samples:
        prompt = corpus_mod.encode_prompt(s, vocab, template, allow_unknown=True)
        prefix = None
        if use_prefix and proj is not None:
            prefix = project(proj, s.image_features)
        gen = generate(lm, prompt, decode_cfg, EOS_ID, prefix=prefix)
        text = corpus_mod.decode_ids(gen.token_ids, vocab)
        texts.append(text)
        result = parse_triplets(text, source_id=s.id)
        skipped += result.skipped
        preds.append(result.graph)
    return preds, skipped, texts


def run_regime(
    cfg: ExperimentConfig,
    train_split: Sequence[InstructionSample],
    eval_split: Sequence[InstructionSample],
    vocab: Vocab,
    lm_init: Optional[LmParams] = None,
    proj_init: Optional[ProjectorParams] = None,
) -> ExperimentResult:
    """Train the configured regime and evaluate on the eval split.

    `lm_init`/`proj_init` allow sharing one initialization across
    regimes; passed models are deep-copied via their arrays, never
    mutated.
    """
    regime = Regime(cfg.train.regime)
    lm_cfg = cfg.lm if cfg.lm.vocab_size > 0 else replace(cfg.lm, vocab_size=vocab.size)
    lm = init_lm(lm_cfg)
    if lm_init is not None:
        lm.ps.load_arrays(lm_init.ps.arrays())
    proj = None
    if regime is not Regime.LLM_KG:
        proj_cfg = replace(cfg.projector, d_vis=cfg.synth.d_vis, d_lm=lm_cfg.d_model)
        proj = init_projector(proj_cfg)
        if proj_init is not None:
            proj.ps.load_arrays(proj_init.ps.arrays())

    enc_train = [corpus_mod.encode_sample(s, vocab, cfg.template) for s in train_split]
    report = train(cfg.train, lm, proj, enc_train)

    preds, skipped, _ = predict_graphs(
        lm, proj, eval_split, vocab, cfg.decode, cfg.template
    )
    golds = [s.output_triplets for s in eval_split]
    eval_report = evaluate_corpus(preds, golds)
    return ExperimentResult(
        lm=lm,
        proj=proj,
        vocab=vocab,
        train_report=report,
        eval_report=eval_report,
        predictions=preds,
        skipped_fragments=skipped,
        train_samples=list(train_split),
        eval_samples=list(eval_split),
    )


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    cfg.validate()
    samples = corpus_mod.gen_synthetic(cfg.synth)
    train_split, eval_split = split_corpus(samples, cfg.eval_fraction)
    vocab = corpus_mod.build_vocab(samples, cfg.template)
    return run_regime(cfg, train_split, eval_split, vocab)


def compare_regimes(
    cfg: ExperimentConfig, regimes: Sequence[str]
) -> Dict[str, ExperimentResult]:
    """Run several regimes on one corpus from one shared initialization."""
    cfg.validate()
    samples = corpus_mod.gen_synthetic(cfg.synth)
    train_split, eval_split = split_corpus(samples, cfg.eval_fraction)
    vocab = corpus_mod.build_vocab(samples, cfg.template)
    lm_cfg = cfg.lm if cfg.lm.vocab_size > 0 else replace(cfg.lm, vocab_size=vocab.size)
    lm_init = init_lm(lm_cfg)
    proj_cfg = replace(cfg.projector, d_vis=cfg.synth.d_vis, d_lm=lm_cfg.d_model)
    proj_init = init_projector(proj_cfg)
    out: Dict[str, ExperimentResult] = {}
    for regime in regimes:
        regime_cfg = replace(cfg, train=replace(cfg.train, regime=regime))
        out[regime] = run_regime(
            regime_cfg, train_split, eval_split, vocab, lm_init=lm_init, proj_init=proj_init
        )
    return out
