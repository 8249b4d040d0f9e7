"""Bag-of-words retrieval baseline.

An inverted index over tokenized documents scored with BM25. Three
document kinds share the machinery: context documents (one open-split
context each, for the ranking task), vertex documents (all closed
contexts of one vertex concatenated, for the linking task), and mention
documents (a sampled slice of one open mention's contexts, used as
queries). Tokenization is the shared lowercase word splitter; nothing is
masked here.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import binio
from .builder import stable_hash
from .core import HEAD, TAIL, DatasetBundle, MentionId, RelationId, VertexId
from .text import split_words

INDEX_MAGIC = b"KGLINKX\x00"
INDEX_VERSION = 1

DOCUMENT_KINDS = ("context-doc", "mention-doc", "vertex-doc")


@dataclass(frozen=True)
class Document:
    """A token bag with a stable id; payload carries whatever the caller
    wants to get back at lookup time (a mention id, a sentence, ...)."""

    id: str
    kind: str
    tokens: tuple[str, ...]
    payload: str = ""

    def __post_init__(self):
        if self.kind not in DOCUMENT_KINDS:
            raise ValueError(f"unknown document kind {self.kind!r}")


@dataclass(frozen=True)
class InvertedIndex:
    """token -> ((doc id, term frequency), ...) with per-document lengths.

    Postings lists are sorted by doc id; the postings mapping iterates in
    sorted token order. Both orders keep scoring runs bit-reproducible.
    """

    postings: Mapping[str, tuple[tuple[str, int], ...]]
    doc_lengths: Mapping[str, int]
    kind: str
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.kind not in DOCUMENT_KINDS:
            raise ValueError(f"unknown document kind {self.kind!r}")
        if self.k1 < 0 or not 0 <= self.b <= 1:
            raise ValueError("k1 must be >= 0 and b within [0, 1]")

    @property
    def doc_count(self) -> int:
        return len(self.doc_lengths)

    @property
    def avg_doc_length(self) -> float:
        if not self.doc_lengths:
            return 0.0
        return sum(self.doc_lengths.values()) / len(self.doc_lengths)


def build_index(documents: Iterable[Document], k1: float = 1.2, b: float = 0.75) -> InvertedIndex:
    docs = sorted(documents, key=lambda d: d.id)
    kinds = {d.kind for d in docs}
    if len(kinds) > 1:
        raise ValueError(f"mixed document kinds in one index: {sorted(kinds)}")
    kind = kinds.pop() if kinds else "context-doc"
    lengths: dict[str, int] = {}
    tfs: dict[str, dict[str, int]] = {}
    for doc in docs:
        if doc.id in lengths:
            raise ValueError(f"duplicate document id {doc.id!r}")
        lengths[doc.id] = len(doc.tokens)
        for token in doc.tokens:
            tfs.setdefault(token, {}).setdefault(doc.id, 0)
            tfs[token][doc.id] += 1
    postings = {
        token: tuple(sorted(by_doc.items())) for token, by_doc in sorted(tfs.items())
    }
    return InvertedIndex(postings=postings, doc_lengths=lengths, kind=kind, k1=k1, b=b)


def idf(index: InvertedIndex, token: str) -> float:
    n_t = len(index.postings.get(token, ()))
    return math.log(1.0 + (index.doc_count - n_t + 0.5) / (n_t + 0.5))


def _term_weight(index: InvertedIndex, token: str, tf: int, doc_length: int) -> float:
    norm = 1.0 - index.b + index.b * doc_length / index.avg_doc_length
    return idf(index, token) * tf * (index.k1 + 1.0) / (tf + index.k1 * norm)


def bm25_score(index: InvertedIndex, query_tokens: Sequence[str], doc_id: str) -> float:
    """Score one document; terms are counted once regardless of how often
    they repeat in the query."""
    if doc_id not in index.doc_lengths:
        raise KeyError(f"unknown document {doc_id!r}")
    score = 0.0
    for token in sorted(set(query_tokens)):
        for posting_doc, tf in index.postings.get(token, ()):
            if posting_doc == doc_id:
                score += _term_weight(index, token, tf, index.doc_lengths[doc_id])
                break
    return score


def score_all(index: InvertedIndex, query_tokens: Sequence[str]) -> dict[str, float]:
    """Scores for every indexed document, zeros included.

    Accumulation follows sorted term order, matching a per-document
    term-by-term recomputation bit for bit.
    """
    scores = {doc_id: 0.0 for doc_id in index.doc_lengths}
    for token in sorted(set(query_tokens)):
        for doc_id, tf in index.postings.get(token, ()):
            scores[doc_id] += _term_weight(index, token, tf, index.doc_lengths[doc_id])
    return scores


def rank(index: InvertedIndex, query_tokens: Sequence[str]) -> list[tuple[str, float]]:
    """All documents, best first, ties broken by document id."""
    scores = score_all(index, query_tokens)
    return sorted(scores.items(), key=lambda p: (-p[1], p[0]))


def context_documents(bundle: DatasetBundle, split: str) -> list[Document]:
    """One document per open-split context; payload is the mention id."""
    part = bundle.split(split)
    return [
        Document(id=cid, kind="context-doc", tokens=tuple(split_words(rec.sentence)), payload=rec.mention)
        for cid, rec in part.contexts.with_ids()
    ]


def vertex_documents(bundle: DatasetBundle) -> list[Document]:
    """One document per closed vertex: all its closed contexts concatenated."""
    closed = bundle.closed
    tokens_by_vertex: dict[VertexId, list[str]] = {v: [] for v in bundle.closed_vertices()}
    for _, rec in closed.contexts.with_ids():
        vertex = closed.mentions.vertex_of[rec.mention]
        tokens_by_vertex[vertex].extend(split_words(rec.sentence))
    return [
        Document(id=vertex, kind="vertex-doc", tokens=tuple(tokens))
        for vertex, tokens in sorted(tokens_by_vertex.items())
    ]


def _closed_contexts_by_vertex(bundle: DatasetBundle) -> dict[VertexId, list[str]]:
    out: dict[VertexId, list[str]] = {}
    closed = bundle.closed
    for _, rec in closed.contexts.with_ids():
        out.setdefault(closed.mentions.vertex_of[rec.mention], []).append(rec.sentence)
    return out


def _representatives(
    bundle: DatasetBundle, vertex: VertexId, relation: RelationId, direction: str
) -> list[VertexId]:
    """Closed vertices that complete the partial triple around ``vertex``."""
    triples = bundle.closed.graph.triples
    if direction == TAIL:
        reps = {h for h, r, t in triples if r == relation and t == vertex}
    elif direction == HEAD:
        reps = {t for h, r, t in triples if r == relation and h == vertex}
    else:
        raise ValueError(f"direction must be head or tail, got {direction!r}")
    return sorted(reps)


def _query_rng(seed: int, *parts: str) -> np.random.Generator:
    return np.random.default_rng([seed, stable_hash("|".join(parts))])


def rank_contexts_bow(
    bundle: DatasetBundle,
    index: InvertedIndex,
    vertex: VertexId,
    relation: RelationId,
    direction: str,
    n_repr: int = 10,
    n_ctx: int = 20,
    seed: int = 0,
) -> list[tuple[str, float]]:
    """Rank the indexed open contexts for one ranking query.

    The query text comes from closed vertices already completing the
    partial triple: up to ``n_repr`` of them, up to ``n_ctx`` closed
    contexts each, concatenated. Without any representative there is
    nothing to compare against and the result is empty.
    """
    reps = _representatives(bundle, vertex, relation, direction)
    if not reps:
        warnings.warn(
            f"no closed vertex completes ({vertex!r}, {relation!r}, {direction}); empty ranking",
            stacklevel=2,
        )
        return []
    rng = _query_rng(seed, vertex, relation, direction)
    if len(reps) > n_repr:
        picked = rng.choice(len(reps), size=n_repr, replace=False)
        reps = [reps[i] for i in sorted(picked)]
    contexts_of = _closed_contexts_by_vertex(bundle)
    query: list[str] = []
    for rep in reps:
        sentences = contexts_of.get(rep, [])
        if len(sentences) > n_ctx:
            picked = rng.choice(len(sentences), size=n_ctx, replace=False)
            sentences = [sentences[i] for i in sorted(picked)]
        for sentence in sentences:
            query.extend(split_words(sentence))
    return rank(index, query)


def _open_context_sentences(bundle: DatasetBundle, mention: MentionId) -> list[str]:
    for split in (bundle.open_validation, bundle.open_test):
        if mention in split.mentions.vertex_of:
            return [rec.sentence for rec in split.contexts.by_mention(mention)]
    raise KeyError(f"unknown open mention {mention!r}")


def link_mention_bow(
    bundle: DatasetBundle,
    index: InvertedIndex,
    mention: MentionId,
    relation: RelationId,
    direction: str,
    n_ctx: int = 20,
    top_n: int = 25,
    seed: int = 0,
) -> list[tuple[VertexId, float]]:
    """Rank closed vertices for one linking query.

    The mention's sampled contexts retrieve the ``top_n`` most similar
    vertex documents; the vertex at 1-based position p then votes 1/p for
    every closed vertex completing the partial triple through it. All
    candidate vertices appear in the result, unvoted ones at score zero.
    """
    if index.kind != "vertex-doc":
        raise ValueError("linking needs an index over vertex documents")
    if direction not in (HEAD, TAIL):
        raise ValueError(f"direction must be head or tail, got {direction!r}")
    sentences = _open_context_sentences(bundle, mention)
    rng = _query_rng(seed, mention, relation, direction)
    if len(sentences) > n_ctx:
        picked = rng.choice(len(sentences), size=n_ctx, replace=False)
        sentences = [sentences[i] for i in sorted(picked)]
    query: list[str] = []
    for sentence in sentences:
        query.extend(split_words(sentence))

    retrieved = [(doc, score) for doc, score in rank(index, query) if score > 0.0][:top_n]
    triples = bundle.closed.graph.triples
    votes: dict[VertexId, float] = {v: 0.0 for v in bundle.closed_vertices()}
    for position, (proxy, _) in enumerate(retrieved, start=1):
        if direction == TAIL:
            completing = (t for h, r, t in triples if r == relation and h == proxy)
        else:
            completing = (h for h, r, t in triples if r == relation and t == proxy)
        for candidate in completing:
            if candidate in votes:
                votes[candidate] += 1.0 / position
    return sorted(votes.items(), key=lambda p: (-p[1], p[0]))


def save_index(index: InvertedIndex, path: str | Path) -> None:
    """Single-file binary layout: header, document table, postings."""
    doc_ids = sorted(index.doc_lengths)
    doc_pos = {doc_id: i for i, doc_id in enumerate(doc_ids)}
    with open(path, "wb") as fh:
        binio.write_magic(fh, INDEX_MAGIC)
        binio.write_u32(fh, INDEX_VERSION)
        binio.write_str_block(fh, index.kind)
        binio.write_f64(fh, index.k1)
        binio.write_f64(fh, index.b)
        binio.write_u32(fh, len(doc_ids))
        for doc_id in doc_ids:
            binio.write_str_block(fh, doc_id)
            binio.write_u32(fh, index.doc_lengths[doc_id])
        binio.write_u32(fh, len(index.postings))
        for token in sorted(index.postings):
            binio.write_str_block(fh, token)
            entries = index.postings[token]
            binio.write_u32(fh, len(entries))
            for doc_id, tf in entries:
                binio.write_u32(fh, doc_pos[doc_id])
                binio.write_u32(fh, tf)


def load_index(path: str | Path) -> InvertedIndex:
    with open(path, "rb") as fh:
        binio.read_magic(fh, INDEX_MAGIC)
        version = binio.read_u32(fh)
        if version != INDEX_VERSION:
            raise binio.FormatError(f"unsupported index version {version}")
        kind = binio.read_str_block(fh)
        k1 = binio.read_f64(fh)
        b = binio.read_f64(fh)
        doc_ids = []
        lengths = {}
        for _ in range(binio.read_u32(fh)):
            doc_id = binio.read_str_block(fh)
            doc_ids.append(doc_id)
            lengths[doc_id] = binio.read_u32(fh)
        postings = {}
        for _ in range(binio.read_u32(fh)):
            token = binio.read_str_block(fh)
            entries = []
            for _ in range(binio.read_u32(fh)):
                pos = binio.read_u32(fh)
                tf = binio.read_u32(fh)
                entries.append((doc_ids[pos], tf))
            postings[token] = tuple(entries)
    return InvertedIndex(postings=postings, doc_lengths=lengths, kind=kind, k1=k1, b=b)
