"""Image feature vectors and the sources that serve them.

Synthetic features are sums of fixed per-concept basis vectors plus
per-sample gaussian noise. The basis depends only on the concept's
lexicon slot, never on the corpus seed, so two corpora drawn with
different seeds still place the same concept in the same direction.

Vectors are quantized to float32 before use. That makes the text
feature-file round trip lossless, so a file-backed source loaded from a
dump of a synthetic source is exactly interchangeable with it.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from radkg.errors import ConfigError, MissingFeatures

_BASIS_ROOT = 0x52414447
_NOISE_TAG = 7

KIND_OBSERVATION = 0
KIND_ANATOMY = 1


def _stable_id_hash(sample_id: str) -> int:
    digest = hashlib.sha256(sample_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@lru_cache(maxsize=4096)
def concept_basis(kind: int, index: int, d_vis: int) -> np.ndarray:
    """Unit-norm direction for one lexicon slot. Cached and read-only."""
    rng = np.random.default_rng(np.random.SeedSequence(_BASIS_ROOT, spawn_key=(kind, index, d_vis)))
    v = rng.standard_normal(d_vis)
    v /= np.linalg.norm(v)
    v.flags.writeable = False
    return v


def compose_features(
    concepts: Iterable[Tuple[int, int]],
    d_vis: int,
    noise_sigma: float,
    seed: int,
    sample_id: str,
) -> np.ndarray:
    """Sum the concept bases, add seeded noise, quantize to float32.

    Concepts are deduplicated and summed in sorted order so the result
    is independent of how the caller collected them.
    """
    vec = np.zeros(d_vis, dtype=np.float64)
    for kind, index in sorted(set(concepts)):
        vec += concept_basis(kind, index, d_vis)
    if noise_sigma > 0.0:
        ss = np.random.SeedSequence(seed, spawn_key=(_NOISE_TAG, _stable_id_hash(sample_id)))
        vec += noise_sigma * np.random.default_rng(ss).standard_normal(d_vis)
    return vec.astype(np.float32).astype(np.float64)


class FileFeatureSource:
    """Features loaded from the plain-text feature file format.

    Header line `d_vis=<int>`, then one line per sample:
    `<id> <float32 values space-separated>`.
    """

    def __init__(self, d_vis: int, table: Dict[str, np.ndarray]):
        self.d_vis = d_vis
        self._table = table

    @classmethod
    def load(cls, path) -> "FileFeatureSource":
        table: Dict[str, np.ndarray] = {}
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if not header.startswith("d_vis="):
                raise ConfigError(f"feature file {path}: bad header {header!r}")
            try:
                d_vis = int(header.split("=", 1)[1])
            except ValueError as exc:
                raise ConfigError(f"feature file {path}: bad header {header!r}") from exc
            if d_vis < 1:
                raise ConfigError(f"feature file {path}: d_vis must be >= 1")
            for lineno, line in enumerate(fh, start=2):
                line = line.strip()
                if not line:
                    continue
                parts = line.split()
                sid, values = parts[0], parts[1:]
                if len(values) != d_vis:
                    raise ConfigError(
                        f"feature file {path}:{lineno}: expected {d_vis} values, got {len(values)}"
                    )
                vec = np.array([np.float32(v) for v in values], dtype=np.float32)
                table[sid] = vec.astype(np.float64)
        return cls(d_vis, table)

    def features_for(self, sample_id: str) -> np.ndarray:
        try:
            return self._table[sample_id]
        except KeyError:
            raise MissingFeatures(f"no feature vector for sample {sample_id!r}") from None

    def ids(self) -> List[str]:
        return list(self._table)


class SyntheticFeatureSource:
    """Recomputes each sample's vector from its triplets and the config.

    Takes the generator's config and samples; never stores vectors, so
    it doubles as a regression check on the generator's own output.
    """

    def __init__(self, cfg, samples: Sequence):
        self.cfg = cfg
        self.d_vis = cfg.d_vis
        self._samples = {s.id: s for s in samples}
        self._slot = {}
        for i, text in enumerate(cfg.observation_lexicon):
            self._slot[text] = (KIND_OBSERVATION, i)
        for i, text in enumerate(cfg.anatomy_lexicon):
            self._slot[text] = (KIND_ANATOMY, i)

    def features_for(self, sample_id: str) -> np.ndarray:
        try:
            sample = self._samples[sample_id]
        except KeyError:
            raise MissingFeatures(f"no sample {sample_id!r} in synthetic source") from None
        concepts = []
        seen = set()
        for trip in sample.output_triplets.triplets:
            for text in (trip.subject.text, trip.object.text):
                if text in seen:
                    continue
                seen.add(text)
                if text not in self._slot:
                    raise MissingFeatures(f"entity {text!r} not in the generating lexicons")
                concepts.append(self._slot[text])
        return compose_features(
            concepts, self.cfg.d_vis, self.cfg.noise_sigma, self.cfg.seed, sample_id
        )

    def ids(self) -> List[str]:
        return list(self._samples)


def write_feature_file(path, d_vis: int, table: Dict[str, np.ndarray]) -> None:
    """Dump vectors in the text format `FileFeatureSource.load` reads."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"d_vis={d_vis}\n")
        for sid in table:
            vec = np.asarray(table[sid], dtype=np.float32)
            if vec.shape != (d_vis,):
                raise ConfigError(f"vector for {sid!r} has shape {vec.shape}, expected ({d_vis},)")
            fh.write(sid + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def dump_source(source, path) -> None:
    """Write any feature source out as a feature file."""
    table = {sid: source.features_for(sid) for sid in source.ids()}
    write_feature_file(path, source.d_vis, table)
