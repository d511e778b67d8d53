"""Instruction corpus: tokenizer, vocabulary, templates, synthesis, I/O.

Report text and triplet strings share one whitespace-insensitive
tokenizer: lowercase, then split into runs of `[a-z0-9_]` and single
other non-space characters. Underscore counts as a word character so
relation names stay single tokens.

The synthetic generator emits two sentence patterns over disjoint
observation/anatomy lexicons and can omit a Bernoulli fraction of
triplets from the text while keeping them in the target graph; those
triplets are recoverable only through the image features, which encode
every entity of the full graph (see `radkg.features`).
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from radkg import features as feat
from radkg.errors import ConfigError, EmptyCorpus, MissingOutput, UnknownTokenError
from radkg.kg import (
    Entity,
    EntityLabel,
    KnowledgeGraph,
    Relation,
    Triplet,
    serialize_triplets,
    triplet_from_record,
    triplet_to_record,
)

TOKEN_RE = re.compile(r"[a-z0-9_]+|[^\sa-z0-9_]")

BOS_ID, EOS_ID, PAD_ID, IMG_ID, UNK_ID = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("<bos>", "<eos>", "<pad>", "<img>", "<unk>")

DEFAULT_INSTRUCTION = (
    "Extract knowledge graph triplets (entity, relation, entity) from the report."
)
DEFAULT_TEMPLATE = "### Instruction: {instruction} ### Input: {report} ### Output: {triplets}"

DEFAULT_OBSERVATIONS = (
    "atelectasis",
    "consolidation",
    "pleural effusion",
    "pneumothorax",
    "cardiomegaly",
    "edema",
    "opacity",
    "pneumonia",
    "fibrosis",
    "nodule",
    "fracture",
    "emphysema",
)
DEFAULT_ANATOMIES = (
    "left lung",
    "right lung",
    "left lower lobe",
    "right lower lobe",
    "left upper lobe",
    "right upper lobe",
    "cardiac silhouette",
    "mediastinum",
    "costophrenic angle",
    "hemidiaphragm",
)

FALLBACK_REPORT = "Findings referenced on the accompanying image."


def tokenize(text: str) -> List[str]:
    return TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocab:
    """Token table; ids 0..4 are reserved for the special tokens."""

    id_to_token: Tuple[str, ...]
    token_to_id: Dict[str, int] = field(repr=False)

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocab":
        body = sorted(set(tokens) - set(SPECIAL_TOKENS))
        id_to_token = SPECIAL_TOKENS + tuple(body)
        return cls(id_to_token, {t: i for i, t in enumerate(id_to_token)})

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def id_for(self, token: str, allow_unknown: bool = False) -> int:
        idx = self.token_to_id.get(token)
        if idx is None:
            if allow_unknown:
                return UNK_ID
            raise UnknownTokenError(f"token {token!r} not in vocabulary")
        return idx

    def ids_for(self, tokens: Sequence[str], allow_unknown: bool = False) -> List[int]:
        return [self.id_for(t, allow_unknown) for t in tokens]

    def token_for(self, idx: int) -> str:
        return self.id_to_token[idx]


def validate_template(template: str) -> None:
    for name in ("{instruction}", "{report}", "{triplets}"):
        if template.count(name) != 1:
            raise ConfigError(f"template must contain {name} exactly once")
    if template.index("{report}") > template.index("{triplets}"):
        raise ConfigError("template must place {report} before {triplets}")


@dataclass(eq=False)
class InstructionSample:
    """One (report, graph) pair, optionally with an image vector."""

    id: str
    instruction: str
    input_report: str
    output_triplets: KnowledgeGraph
    image_features: Optional[np.ndarray] = None


@dataclass(eq=False)
class EncodedSample:
    """Token ids plus the loss mask over output positions."""

    sample_id: str
    token_ids: np.ndarray
    loss_mask: np.ndarray
    image_features: Optional[np.ndarray] = None


def format_sample(sample: InstructionSample, template: str = DEFAULT_TEMPLATE) -> str:
    validate_template(template)
    if not sample.output_triplets.triplets:
        raise MissingOutput(f"sample {sample.id!r} has no output triplets")
    return template.format(
        instruction=sample.instruction,
        report=sample.input_report,
        triplets=serialize_triplets(sample.output_triplets),
    )


def format_prompt(sample: InstructionSample, template: str = DEFAULT_TEMPLATE) -> str:
    validate_template(template)
    head = template[: template.index("{triplets}")]
    return head.format(instruction=sample.instruction, report=sample.input_report)


def build_vocab(samples: Sequence[InstructionSample], template: str = DEFAULT_TEMPLATE) -> Vocab:
    if not samples:
        raise EmptyCorpus("cannot build a vocabulary from zero samples")
    tokens: set = set()
    for s in samples:
        tokens.update(tokenize(format_sample(s, template)))
    return Vocab.from_tokens(tokens)


def encode_sample(
    sample: InstructionSample,
    vocab: Vocab,
    template: str = DEFAULT_TEMPLATE,
    allow_unknown: bool = False,
) -> EncodedSample:
    """Encode the fully formatted sample with bos/eos and a loss mask.

    The mask is true exactly on output-segment tokens and the closing
    eos; bos, instruction, and report positions are false.
    """
    full_tokens = tokenize(format_sample(sample, template))
    prompt_tokens = tokenize(format_prompt(sample, template))
    if full_tokens[: len(prompt_tokens)] != prompt_tokens:
        raise ConfigError("template prompt is not a token prefix of the full text")
    ids = [BOS_ID] + vocab.ids_for(full_tokens, allow_unknown) + [EOS_ID]
    mask = np.zeros(len(ids), dtype=bool)
    mask[1 + len(prompt_tokens) :] = True
    return EncodedSample(
        sample_id=sample.id,
        token_ids=np.array(ids, dtype=np.int64),
        loss_mask=mask,
        image_features=sample.image_features,
    )


def encode_prompt(
    sample: InstructionSample,
    vocab: Vocab,
    template: str = DEFAULT_TEMPLATE,
    allow_unknown: bool = False,
) -> np.ndarray:
    tokens = tokenize(format_prompt(sample, template))
    return np.array([BOS_ID] + vocab.ids_for(tokens, allow_unknown), dtype=np.int64)


def decode_ids(ids: Sequence[int], vocab: Vocab) -> str:
    """Space-join non-special tokens; unk renders as its literal."""
    parts = []
    for i in ids:
        i = int(i)
        if i in (BOS_ID, EOS_ID, PAD_ID, IMG_ID):
            continue
        parts.append(vocab.token_for(i))
    return " ".join(parts)


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the synthetic report generator."""

    n_samples: int = 256
    observation_lexicon: Tuple[str, ...] = DEFAULT_OBSERVATIONS
    anatomy_lexicon: Tuple[str, ...] = DEFAULT_ANATOMIES
    image_only_fraction: float = 0.0
    d_vis: int = 32
    noise_sigma: float = 0.02
    max_triplets: int = 4
    located_weight: float = 0.8
    seed: int = 0

    def validate(self) -> None:
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if not self.observation_lexicon or not self.anatomy_lexicon:
            raise ConfigError("lexicons must be non-empty")
        if set(self.observation_lexicon) & set(self.anatomy_lexicon):
            raise ConfigError("observation and anatomy lexicons must be disjoint")
        if len(set(self.observation_lexicon)) != len(self.observation_lexicon):
            raise ConfigError("observation lexicon has duplicates")
        if len(set(self.anatomy_lexicon)) != len(self.anatomy_lexicon):
            raise ConfigError("anatomy lexicon has duplicates")
        if not 0.0 <= self.image_only_fraction <= 1.0:
            raise ConfigError("image_only_fraction must be in [0, 1]")
        if self.d_vis < 1:
            raise ConfigError("d_vis must be >= 1")
        if self.noise_sigma < 0.0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.max_triplets < 1:
            raise ConfigError("max_triplets must be >= 1")
        if not 0.0 <= self.located_weight <= 1.0:
            raise ConfigError("located_weight must be in [0, 1]")


def _draw(rng: np.random.Generator, pool: List[int]) -> int:
    return pool.pop(int(rng.integers(len(pool))))


def _located_triplet(obs: str, anat: str) -> Triplet:
    return Triplet(
        Entity(obs, EntityLabel.OBSERVATION_PRESENT),
        Relation.LOCATED_AT,
        Entity(anat, EntityLabel.ANATOMY),
    )


def _suggestive_triplet(obs: str, obs2: str) -> Triplet:
    return Triplet(
        Entity(obs, EntityLabel.OBSERVATION_PRESENT),
        Relation.SUGGESTIVE_OF,
        Entity(obs2, EntityLabel.OBSERVATION_UNCERTAIN),
    )


def gen_synthetic(cfg: SynthConfig) -> List[InstructionSample]:
    """Draw a deterministic corpus from the config seed.

    Omitted triplets keep their entities in the image vector but leave
    the text; in the target graph they appear after the textual ones,
    re-paired rank-wise within each relation so the target depends only
    on the omitted entity sets, not the omission order.
    """
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    samples: List[InstructionSample] = []
    for i in range(cfg.n_samples):
        sid = f"synth-{i:05d}"
        obs_pool = list(range(len(cfg.observation_lexicon)))
        anat_pool = list(range(len(cfg.anatomy_lexicon)))
        n_target = int(rng.integers(1, cfg.max_triplets + 1))

        sentences: List[str] = []
        shown: List[Triplet] = []
        omitted_located: List[Tuple[int, int]] = []
        omitted_suggestive: List[Tuple[int, int]] = []
        concepts: List[Tuple[int, int]] = []

        for _ in range(n_target):
            want_located = rng.random() < cfg.located_weight
            can_located = bool(obs_pool) and bool(anat_pool)
            can_suggestive = len(obs_pool) >= 2
            if want_located and not can_located:
                want_located = False
            if not want_located and not can_suggestive:
                want_located = True
            if want_located and not can_located:
                break
            omit = rng.random() < cfg.image_only_fraction
            if want_located:
                oi = _draw(rng, obs_pool)
                ai = _draw(rng, anat_pool)
                concepts.append((feat.KIND_OBSERVATION, oi))
                concepts.append((feat.KIND_ANATOMY, ai))
                if omit:
                    omitted_located.append((oi, ai))
                else:
                    obs = cfg.observation_lexicon[oi]
                    anat = cfg.anatomy_lexicon[ai]
                    sentences.append(f"There is {obs} in the {anat}.")
                    shown.append(_located_triplet(obs, anat))
            else:
                oi = _draw(rng, obs_pool)
                oj = _draw(rng, obs_pool)
                concepts.append((feat.KIND_OBSERVATION, oi))
                concepts.append((feat.KIND_OBSERVATION, oj))
                if omit:
                    omitted_suggestive.append((oi, oj))
                else:
                    obs = cfg.observation_lexicon[oi]
                    obs2 = cfg.observation_lexicon[oj]
                    sentences.append(f"{obs} suggestive of {obs2}.")
                    shown.append(_suggestive_triplet(obs, obs2))

        triplets = list(shown)
        if omitted_located:
            firsts = sorted(p[0] for p in omitted_located)
            seconds = sorted(p[1] for p in omitted_located)
            for oi, ai in zip(firsts, seconds):
                triplets.append(
                    _located_triplet(cfg.observation_lexicon[oi], cfg.anatomy_lexicon[ai])
                )
        if omitted_suggestive:
            firsts = sorted(p[0] for p in omitted_suggestive)
            seconds = sorted(p[1] for p in omitted_suggestive)
            for oi, oj in zip(firsts, seconds):
                triplets.append(
                    _suggestive_triplet(cfg.observation_lexicon[oi], cfg.observation_lexicon[oj])
                )

        report = " ".join(sentences) if sentences else FALLBACK_REPORT
        vec = feat.compose_features(concepts, cfg.d_vis, cfg.noise_sigma, cfg.seed, sid)
        samples.append(
            InstructionSample(
                id=sid,
                instruction=DEFAULT_INSTRUCTION,
                input_report=report,
                output_triplets=KnowledgeGraph(triplets=triplets, source_id=sid),
                image_features=vec,
            )
        )
    return samples


def gold_graphs(samples: Sequence[InstructionSample]) -> List[KnowledgeGraph]:
    return [s.output_triplets for s in samples]


def save_corpus(path, samples: Sequence[InstructionSample]) -> None:
    """One JSON object per line: id, report, triplets, image_features."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            rec = {
                "id": s.id,
                "report": s.input_report,
                "triplets": [triplet_to_record(t) for t in s.output_triplets.triplets],
                "image_features": None
                if s.image_features is None
                else [float(v) for v in s.image_features],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_corpus(path) -> List[InstructionSample]:
    samples: List[InstructionSample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            triplets = [triplet_from_record(r) for r in rec["triplets"]]
            vec = rec.get("image_features")
            samples.append(
                InstructionSample(
                    id=rec["id"],
                    instruction=DEFAULT_INSTRUCTION,
                    input_report=rec["report"],
                    output_triplets=KnowledgeGraph(triplets=triplets, source_id=rec["id"]),
                    image_features=None if vec is None else np.asarray(vec, dtype=np.float64),
                )
            )
    if not samples:
        raise EmptyCorpus(f"no samples in {path}")
    return samples


def save_vocab(path, vocab: Vocab) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for token in vocab.id_to_token:
            fh.write(token + "\n")


def load_vocab(path) -> Vocab:
    with open(path, "r", encoding="utf-8") as fh:
        tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
    if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
        raise ConfigError(f"vocab file {path} does not start with the special tokens")
    return Vocab(tuple(tokens), {t: i for i, t in enumerate(tokens)})


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
