"""Text side of the model: tokenization, a mean-pooling encoder, and the
affine projection into the complex embedding space.

The encoder contract is just "token sequence -> R^{d'}": the built-in
:class:`TokenEncoder` mean-pools a learned token table, and
:class:`ExternalEncodings` substitutes precomputed per-context vectors
(for plugging in any stronger, offline encoder). The projection maps
R^{d'} affinely to R^{2d}, read as d real parts followed by d imaginary
parts.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

UNKNOWN_TOKEN = "<unk>"
MASK_TOKEN = "<mask>"

_WORD_RE = re.compile(r"[0-9a-z]+")


def split_words(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs; the shared tokenizer."""
    return _WORD_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    index: Mapping[str, int]

    def __post_init__(self):
        if UNKNOWN_TOKEN not in self.index or MASK_TOKEN not in self.index:
            raise ValueError("vocabulary must contain the unknown and mask tokens")
        indices = sorted(self.index.values())
        if indices != list(range(len(indices))):
            raise ValueError("vocabulary indices must be dense from 0")

    def __len__(self) -> int:
        return len(self.index)

    @property
    def unknown_id(self) -> int:
        return self.index[UNKNOWN_TOKEN]

    @property
    def mask_id(self) -> int:
        return self.index[MASK_TOKEN]

    def tokens_by_index(self) -> list[str]:
        return [t for t, _ in sorted(self.index.items(), key=lambda kv: kv[1])]


def build_vocabulary(sentences: Iterable[str]) -> Vocabulary:
    """Specials first, then the corpus words in sorted order (deterministic)."""
    words = sorted({w for s in sentences for w in split_words(s)} - {UNKNOWN_TOKEN, MASK_TOKEN})
    index = {UNKNOWN_TOKEN: 0, MASK_TOKEN: 1}
    for w in words:
        index[w] = len(index)
    return Vocabulary(index=index)


def save_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    Path(path).write_text("\n".join(vocab.tokens_by_index()) + "\n", encoding="utf-8")


def load_vocabulary(path: str | Path) -> Vocabulary:
    tokens = Path(path).read_text(encoding="utf-8").splitlines()
    return Vocabulary(index={t: i for i, t in enumerate(tokens)})


def tokenize(vocab: Vocabulary, sentence: str, mask_surface: str | None = None) -> list[int]:
    """Sentence to index sequence; every token of ``mask_surface`` is masked
    wherever it occurs, not only inside the surface span."""
    masked = set(split_words(mask_surface)) if mask_surface else ()
    return [
        vocab.mask_id if w in masked else vocab.index.get(w, vocab.unknown_id)
        for w in split_words(sentence)
    ]


@dataclass(frozen=True)
class TokenEncoder:
    """Mean pooling over a token embedding table of width d'."""

    table: np.ndarray
    vocab: Vocabulary

    def __post_init__(self):
        if self.table.ndim != 2 or self.table.shape[0] != len(self.vocab):
            raise ValueError(
                f"table shape {self.table.shape} does not match vocabulary of {len(self.vocab)}"
            )
        if not np.isfinite(self.table).all():
            raise ValueError("encoder table contains non-finite values")

    @property
    def dim(self) -> int:
        return self.table.shape[1]


def init_encoder(vocab: Vocabulary, dim: int, seed: int) -> TokenEncoder:
    rng = np.random.default_rng([seed, 2])
    return TokenEncoder(table=rng.normal(0.0, 0.1, size=(len(vocab), dim)), vocab=vocab)


def encode(encoder: TokenEncoder, tokens: Sequence[int]) -> np.ndarray:
    """Mean of the token rows; the zero vector for an empty sequence."""
    if len(tokens) == 0:
        return np.zeros(encoder.dim)
    return encoder.table[list(tokens)].mean(axis=0)


@dataclass(frozen=True)
class Projection:
    """x -> W^T x + b with W of shape (d', 2d) and b of length 2d."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError(
                f"inconsistent projection shapes {self.weight.shape} / {self.bias.shape}"
            )
        if self.weight.shape[1] % 2:
            raise ValueError("projection output width must be even (real and imaginary halves)")

    @property
    def input_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def graph_dim(self) -> int:
        return self.weight.shape[1] // 2


def init_projection(input_dim: int, graph_dim: int, seed: int) -> Projection:
    rng = np.random.default_rng([seed, 3])
    return Projection(
        weight=rng.normal(0.0, 0.1, size=(input_dim, 2 * graph_dim)),
        bias=np.zeros(2 * graph_dim),
    )


def project(projection: Projection, x: np.ndarray) -> np.ndarray:
    if x.shape != (projection.input_dim,):
        raise ValueError(f"input shape {x.shape} does not match d'={projection.input_dim}")
    return projection.weight.T @ x + projection.bias


def encode_multi(
    encoder: TokenEncoder, projection: Projection, token_seqs: Sequence[Sequence[int]]
) -> np.ndarray:
    """Average the per-context encodings, then project once."""
    if len(token_seqs) == 0:
        raise ValueError("at least one context is required")
    pooled = np.mean([encode(encoder, toks) for toks in token_seqs], axis=0)
    return project(projection, pooled)


@dataclass(frozen=True)
class ExternalEncodings:
    """Precomputed context vectors keyed by context id; a frozen encoder."""

    vectors: Mapping[str, np.ndarray]
    dim: int

    def __post_init__(self):
        for cid, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise ValueError(f"encoding {cid!r} has shape {vec.shape}, expected ({self.dim},)")


def export_external_encodings(encodings: ExternalEncodings, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(encodings.vectors)}\t{encodings.dim}\n")
        for cid in sorted(encodings.vectors):
            floats = " ".join(repr(float(v)) for v in encodings.vectors[cid])
            fh.write(f"{cid}\t{floats}\n")


def import_external_encodings(path: str | Path) -> ExternalEncodings:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if len(header) != 2:
            raise ValueError(f"{path}:1: header must be count<TAB>dim")
        count, dim = int(header[0]), int(header[1])
        vectors: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cid, _, rest = line.partition("\t")
            vec = np.array([float(v) for v in rest.split()])
            if vec.shape != (dim,):
                raise ValueError(
                    f"{path}:{lineno}: encoding has {vec.shape[0]} values, header says {dim}"
                )
            vectors[cid] = vec
    if len(vectors) != count:
        raise ValueError(f"{path}: header promised {count} rows, found {len(vectors)}")
    return ExternalEncodings(vectors=vectors, dim=dim)
