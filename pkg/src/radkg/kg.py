"""Triplet schema, serialization grammar, post-processing parser, and diffing.

The grammar is deliberately rigid so that serialize -> parse is lossless and
metric strings are deterministic:

    (subject, relation, object); (subject, relation, object)

Parentheses, commas and semicolons are reserved; entity text may contain
spaces but none of the reserved characters. Relations are a closed set.
Entity labels are carried by the schema and the JSONL persistence format but
are not part of the text grammar, so parsing model output assigns the
default label.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

from .errors import GrammarViolation

RESERVED_CHARS = "(),;"


class Relation(Enum):
    SUGGESTIVE_OF = "suggestive_of"
    LOCATED_AT = "located_at"
    MODIFY = "modify"


class EntityLabel(Enum):
    ANATOMY = "anatomy"
    OBSERVATION_PRESENT = "observation_present"
    OBSERVATION_UNCERTAIN = "observation_uncertain"
    OBSERVATION_ABSENT = "observation_absent"


RELATION_TOKENS = {r.value: r for r in Relation}


@dataclass(frozen=True)
class Entity:
    """A contiguous stretch of text naming an anatomy or an observation.

    Whitespace is normalized on construction; reserved grammar characters
    raise GrammarViolation.
    """

    text: str
    label: EntityLabel = EntityLabel.OBSERVATION_PRESENT

    def __post_init__(self) -> None:
        normalized = " ".join(self.text.split())
        if not normalized:
            raise GrammarViolation("entity text must be a non-empty token sequence")
        for ch in RESERVED_CHARS:
            if ch in normalized:
                raise GrammarViolation(
                    f"entity text {normalized!r} contains reserved character {ch!r}"
                )
        object.__setattr__(self, "text", normalized)


@dataclass(frozen=True)
class Triplet:
    subject: Entity
    relation: Relation
    object: Entity

    def key(self) -> tuple[str, Relation, str]:
        """Identity used for dedup/diff: case-insensitive text, exact relation."""
        return (self.subject.text.casefold(), self.relation, self.object.text.casefold())


@dataclass
class KnowledgeGraph:
    """An ordered list of triplets for one report; duplicates are allowed."""

    triplets: list[Triplet] = field(default_factory=list)
    source_id: str = ""

    def __post_init__(self) -> None:
        # normalize so graphs built from tuples compare equal to parsed ones
        self.triplets = list(self.triplets)

    def __len__(self) -> int:
        return len(self.triplets)


@dataclass
class ParseResult:
    graph: KnowledgeGraph
    skipped: int


@dataclass
class DiffReport:
    """Prediction-vs-gold comparison after dedup, in first-occurrence order.

    correct holds the gold representatives; counts partition both sides:
    |correct| + |hallucinated| == |dedup(pred)| and
    |correct| + |missed| == |dedup(gold)|.
    """

    correct: tuple[Triplet, ...]
    hallucinated: tuple[Triplet, ...]
    missed: tuple[Triplet, ...]


def serialize_triplets(kg: KnowledgeGraph) -> str:
    """Emit the canonical `(s, r, o); ...` form. Empty graphs serialize to ""."""
    parts = []
    for t in kg.triplets:
        for ent in (t.subject, t.object):
            for ch in RESERVED_CHARS:
                if ch in ent.text:
                    raise GrammarViolation(
                        f"entity text {ent.text!r} contains reserved character {ch!r}"
                    )
        parts.append(f"({t.subject.text}, {t.relation.value}, {t.object.text})")
    return "; ".join(parts)


def to_metric_string(kg: KnowledgeGraph) -> str:
    """Serialization with every punctuation mark as a standalone token.

    This is the form fed to the n-gram metrics, e.g.
    `( opacity , suggestive_of , pneumonia )`.
    """
    parts = []
    for t in kg.triplets:
        parts.append(f"( {t.subject.text} , {t.relation.value} , {t.object.text} )")
    return " ; ".join(parts)


_FRAGMENT_RE = re.compile(r"\(([^()]*)\)")


def parse_triplets(text: str, source_id: str = "") -> ParseResult:
    """Extract every well-formed triplet fragment from arbitrary model output.

    Total: never raises on any input string. Parenthesized fragments that do
    not form `(entity, relation, entity)` with a known relation are counted
    in `skipped` instead. Parsed entities get the default label.
    """
    triplets: list[Triplet] = []
    skipped = 0
    for match in _FRAGMENT_RE.finditer(text):
        fields = match.group(1).split(",")
        if len(fields) != 3:
            skipped += 1
            continue
        subj_text = " ".join(fields[0].split())
        rel_text = " ".join(fields[1].split())
        obj_text = " ".join(fields[2].split())
        relation = RELATION_TOKENS.get(rel_text)
        if relation is None or not subj_text or not obj_text or ";" in match.group(1):
            skipped += 1
            continue
        triplets.append(Triplet(Entity(subj_text), relation, Entity(obj_text)))
    return ParseResult(KnowledgeGraph(triplets, source_id), skipped)


def _dedup(kg: KnowledgeGraph) -> dict[tuple, Triplet]:
    out: dict[tuple, Triplet] = {}
    for t in kg.triplets:
        out.setdefault(t.key(), t)
    return out


def kg_diff(pred: KnowledgeGraph, gold: KnowledgeGraph) -> DiffReport:
    """Set-semantics comparison after dedup.

    Matching is case-insensitive on entity text, exact on relation, and
    ignores entity labels (model output carries none).
    """
    pred_map = _dedup(pred)
    gold_map = _dedup(gold)
    correct = tuple(t for k, t in gold_map.items() if k in pred_map)
    hallucinated = tuple(t for k, t in pred_map.items() if k not in gold_map)
    missed = tuple(t for k, t in gold_map.items() if k not in pred_map)
    return DiffReport(correct, hallucinated, missed)


def graphs_match(pred: KnowledgeGraph, gold: KnowledgeGraph) -> bool:
    """True when the deduplicated triplet sets coincide (exact-match metric)."""
    diff = kg_diff(pred, gold)
    return not diff.hallucinated and not diff.missed


def triplet_to_record(t: Triplet) -> list[str]:
    return [t.subject.text, t.subject.label.value, t.relation.value, t.object.text, t.object.label.value]


def triplet_from_record(rec: Iterable[str]) -> Triplet:
    s_text, s_label, rel, o_text, o_label = rec
    return Triplet(
        Entity(s_text, EntityLabel(s_label)),
        Relation(rel),
        Entity(o_text, EntityLabel(o_label)),
    )


def save_kgs(kgs: Iterable[KnowledgeGraph], path: str | Path) -> None:
    """Write one JSON record per graph: {"id", "triplets": [[s, label, rel, o, label], ...]}."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for kg in kgs:
            record = {
                "id": kg.source_id,
                "triplets": [triplet_to_record(t) for t in kg.triplets],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_kgs(path: str | Path) -> list[KnowledgeGraph]:
    graphs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            triplets = [triplet_from_record(rec) for rec in record["triplets"]]
            graphs.append(KnowledgeGraph(triplets, record["id"]))
    return graphs
