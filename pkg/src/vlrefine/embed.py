"""Phrase embeddings: a seeded bag-of-tokens provider and an EMB-file provider.

Hash mode averages per-token Gaussian vectors, so it ignores word order.
Order-sensitive (contextual) vectors can only come from an EMB file written
by an external encoder.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DimMismatch, EmbeddingParseError, EmptyPhrase, UnknownPhrase


@dataclass(frozen=True)
class PhraseEmbedding:
    vector: np.ndarray
    phrase: str


def _token_seed(seed: int, token: str) -> np.random.SeedSequence:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return np.random.SeedSequence([seed, int.from_bytes(digest, "little")])


@lru_cache(maxsize=65536)
def _token_vector(seed: int, dim: int, token: str) -> np.ndarray:
    vec = np.random.default_rng(_token_seed(seed, token)).standard_normal(dim)
    vec.setflags(write=False)
    return vec


def _unit(vec):
    norm = np.linalg.norm(vec)
    if not np.isfinite(norm) or norm == 0.0:
        raise ValueError("cannot normalize a zero or non-finite vector")
    return vec / norm


@dataclass
class EmbeddingProvider:
    dim: int
    mode: str = "hash"
    seed: int = 0
    table: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("hash", "file"):
            raise ValueError(f"unknown provider mode {self.mode!r}")
        if self.dim < 1:
            raise ValueError("dim must be positive")

    def __call__(self, phrase: str) -> PhraseEmbedding:
        return embed_phrase(self, phrase)

    def vector(self, phrase: str) -> np.ndarray:
        return embed_phrase(self, phrase).vector

    def token_vectors(self, text: str) -> np.ndarray:
        """One unit row per whitespace token (stand-in for per-word encoder features)."""
        toks = text.split()
        if not toks:
            raise EmptyPhrase("empty text")
        if self.mode == "hash":
            return np.stack([_unit(_token_vector(self.seed, self.dim, t)) for t in toks])
        return np.stack([self.vector(t) for t in toks])


def hash_provider(dim: int, seed: int = 0) -> EmbeddingProvider:
    return EmbeddingProvider(dim=dim, mode="hash", seed=seed)


def embed_phrase(provider: EmbeddingProvider, phrase: str) -> PhraseEmbedding:
    key = " ".join(phrase.split())
    if not key:
        raise EmptyPhrase("phrase is empty after trimming")
    if provider.mode == "file":
        try:
            vec = provider.table[key]
        except KeyError:
            raise UnknownPhrase(f"phrase {key!r} not in embedding table") from None
        return PhraseEmbedding(vec, key)
    toks = key.split()
    acc = np.zeros(provider.dim)
    for tok in toks:
        acc += _token_vector(provider.seed, provider.dim, tok)
    vec = _unit(acc / len(toks))
    vec.setflags(write=False)
    return PhraseEmbedding(vec, key)


def load_embedding_file(path) -> EmbeddingProvider:
    """Read an EMB file: header ``EMB 1 <dim>`` then ``phrase<TAB>c0,c1,...`` rows.

    Rows are L2-normalized on load.
    """
    table = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "EMB" or header[1] != "1":
            raise EmbeddingParseError(1, "expected header 'EMB 1 <dim>'")
        try:
            declared = int(header[2])
        except ValueError:
            raise EmbeddingParseError(1, f"bad dimension {header[2]!r}") from None
        row = 0
        for lineno, line in enumerate(fh, 2):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            row += 1
            phrase, sep, values = line.partition("\t")
            if not sep or not phrase.strip():
                raise EmbeddingParseError(lineno, "expected '<phrase>\\t<values>'")
            try:
                vec = np.array([float(v) for v in values.split(",")])
            except ValueError as exc:
                raise EmbeddingParseError(lineno, str(exc)) from None
            if dim is None:
                dim = len(vec)
                if dim != declared:
                    raise DimMismatch(row, declared, dim)
            elif len(vec) != dim:
                raise DimMismatch(row, dim, len(vec))
            if not np.all(np.isfinite(vec)):
                raise EmbeddingParseError(lineno, "non-finite value")
            try:
                vec = _unit(vec)
            except ValueError:
                raise EmbeddingParseError(lineno, "zero vector") from None
            vec.setflags(write=False)
            table[" ".join(phrase.split())] = vec
    return EmbeddingProvider(dim=dim if dim is not None else declared, mode="file", table=table)


def write_embedding_file(path, table: dict) -> None:
    items = list(table.items())
    if not items:
        raise ValueError("empty table")
    dim = len(items[0][1])
    lines = [f"EMB 1 {dim}"]
    for phrase, vec in items:
        if "\t" in phrase or "\n" in phrase:
            raise ValueError(f"phrase {phrase!r} contains a tab or newline")
        lines.append(phrase + "\t" + ",".join(repr(float(np.float32(x))) for x in vec))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
