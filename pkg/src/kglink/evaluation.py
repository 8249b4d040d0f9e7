"""Ranking and linking evaluation under target-filtered ranks.

Both tasks reduce to the same bookkeeping: produce a ranked candidate
list per query, strike every other known-true answer from it, take the
1-based position of the target, and micro-average hits@k and mean
reciprocal rank over all task triples. A target that never made it into
the candidate list (a subsampled ranking can drop it) is recorded as a
miss and contributes zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .bow import InvertedIndex, link_mention_bow, rank_contexts_bow
from .builder import stable_hash
from .complex_model import _hadamard, conj
from .core import HEAD, TAIL, DatasetBundle, MentionId, RelationId, VertexId
from .inductive import OpenWorldModel, context_vector, rank_vertices

RANKING = "ranking"
LINKING = "linking"
TASKS = (RANKING, LINKING)

DEFAULT_KS = (1, 10, 100)
DEFAULT_SUBSAMPLE_RANKING = 400000
DEFAULT_CTX_PER_MENTION = 100


@dataclass(frozen=True)
class RankedList:
    """Scored candidates, best first; equal scores ordered by id."""

    items: tuple[tuple[str, float], ...]

    def __post_init__(self):
        seen = set()
        previous = None
        for candidate, score in self.items:
            if candidate in seen:
                raise ValueError(f"duplicate candidate {candidate!r} in ranking")
            seen.add(candidate)
            if previous is not None:
                if score > previous[1] or (score == previous[1] and candidate < previous[0]):
                    raise ValueError("ranking must be sorted by score desc, ties by id")
            previous = (candidate, score)

    def ids(self) -> tuple[str, ...]:
        return tuple(candidate for candidate, _ in self.items)

    def __len__(self) -> int:
        return len(self.items)


class FilteredRank(NamedTuple):
    rank: int
    missed: bool


def target_filtered_rank(
    ranking: RankedList | Sequence[tuple[str, float]],
    truths: frozenset[str] | set[str],
    target: str,
) -> FilteredRank:
    """1-based rank of ``target`` after removing the other true answers.

    A target absent from the ranking gets rank len+1 over the filtered
    list and is flagged as a miss.
    """
    if target not in truths:
        raise ValueError(f"target {target!r} is not among the known true answers")
    items = ranking.items if isinstance(ranking, RankedList) else tuple(ranking)
    others = truths - {target}
    position = 0
    for candidate, _ in items:
        if candidate in others:
            continue
        position += 1
        if candidate == target:
            return FilteredRank(rank=position, missed=False)
    return FilteredRank(rank=position + 1, missed=True)


def _query_rng(seed: int, *parts: str) -> np.random.Generator:
    return np.random.default_rng([seed, stable_hash("|".join(parts))])


def _split_contexts(bundle: DatasetBundle, split: str):
    part = bundle.split(split)
    return list(part.contexts.with_ids())


def _draw_ids(ids: Sequence[str], limit: int, rng: np.random.Generator) -> list[str]:
    if len(ids) <= limit:
        return list(ids)
    picked = rng.choice(len(ids), size=limit, replace=False)
    return [ids[i] for i in sorted(picked)]


def rank_contexts_neural(
    model: OpenWorldModel,
    bundle: DatasetBundle,
    vertex: VertexId,
    relation: RelationId,
    direction: str,
    subsample: int = DEFAULT_SUBSAMPLE_RANKING,
    seed: int = 0,
    split: str = "validation",
) -> RankedList:
    """Rank (a sample of) the open split's contexts for one ranking query.

    Each drawn context is scored on its own against the query's partial
    triple, scores are softmax-normalized over the drawn candidate set,
    and the list comes back best first with ties broken by context id.
    """
    if direction not in (HEAD, TAIL):
        raise ValueError(f"direction must be head or tail, got {direction!r}")
    with_ids = _split_contexts(bundle, split)
    by_id = {cid: rec for cid, rec in with_ids}
    ids = [cid for cid, _ in with_ids]
    rng = _query_rng(seed, vertex, relation, direction)
    drawn = _draw_ids(ids, subsample, rng)
    if not drawn:
        return RankedList(items=())

    X = np.array([context_vector(model.encoder, (cid, by_id[cid].sentence)) for cid in drawn])
    C = X @ model.projection.weight + model.projection.bias
    rel = model.graph.relation[model.graph.relation_row(relation)]
    if direction == HEAD:
        rel = conj(rel)
    v_vec = model.graph.entity[model.graph.vertex_row(vertex)]
    raw = _hadamard(C, rel) @ v_vec
    shifted = np.exp(raw - raw.max())
    probs = shifted / shifted.sum()
    order = sorted(zip(drawn, probs), key=lambda p: (-p[1], p[0]))
    return RankedList(items=tuple((cid, float(p)) for cid, p in order))


def contexts_to_mentions(
    ranking: RankedList | Sequence[tuple[str, float]],
    mention_of: Mapping[str, MentionId],
) -> RankedList:
    """Collapse a context ranking to mentions by their best context."""
    items = ranking.items if isinstance(ranking, RankedList) else tuple(ranking)
    out = []
    seen = set()
    for cid, score in items:
        mention = mention_of[cid]
        if mention in seen:
            continue
        seen.add(mention)
        out.append((mention, score))
    return RankedList(items=tuple(out))


def link_rank_neural(
    model: OpenWorldModel,
    bundle: DatasetBundle,
    mention: MentionId,
    relation: RelationId,
    direction: str,
    ctx_per_mention: int = DEFAULT_CTX_PER_MENTION,
    seed: int = 0,
) -> RankedList:
    """Rank all closed vertices for one linking query, using a fused
    sample of the mention's contexts."""
    contexts = _open_mention_contexts(bundle, mention)
    rng = np.random.default_rng([seed, stable_hash(mention)])
    if len(contexts) > ctx_per_mention:
        picked = rng.choice(len(contexts), size=ctx_per_mention, replace=False)
        contexts = [contexts[i] for i in sorted(picked)]
    if not contexts:
        return RankedList(items=())
    return RankedList(items=tuple(rank_vertices(model, contexts, relation, direction)))


def _open_mention_contexts(bundle: DatasetBundle, mention: MentionId):
    for split_name in ("validation", "test"):
        part = bundle.split(split_name)
        if mention in part.mentions.vertex_of:
            return [
                (cid, rec.sentence)
                for cid, rec in part.contexts.with_ids()
                if rec.mention == mention
            ]
    raise KeyError(f"unknown open mention {mention!r}")


@dataclass(frozen=True)
class BowParams:
    n_repr: int = 10
    n_ctx: int = 20
    top_n: int = 25


@dataclass(frozen=True)
class QueryDiagnostic:
    mention: MentionId
    relation: RelationId
    vertex: VertexId
    direction: str
    rank: int
    missed: bool
    contribution: float


@dataclass(frozen=True)
class EvalReport:
    task: str
    split: str
    engine: str
    hits: Mapping[int, float]
    mrr: float
    query_count: int
    diagnostics: tuple[QueryDiagnostic, ...] = field(repr=False)
    subsample_ranking: int = DEFAULT_SUBSAMPLE_RANKING
    ctx_per_mention: int = DEFAULT_CTX_PER_MENTION
    seed: int = 0


def _engine_name(engine) -> str:
    if isinstance(engine, OpenWorldModel):
        return "neural"
    if isinstance(engine, InvertedIndex):
        return "bm25"
    raise TypeError(f"unsupported engine {type(engine).__name__}")


def evaluate(
    task: str,
    engine: OpenWorldModel | InvertedIndex,
    bundle: DatasetBundle,
    split: str = "validation",
    ks: Sequence[int] = DEFAULT_KS,
    subsample_ranking: int = DEFAULT_SUBSAMPLE_RANKING,
    ctx_per_mention: int = DEFAULT_CTX_PER_MENTION,
    seed: int = 0,
    bow: BowParams | None = None,
) -> EvalReport:
    """Micro-averaged hits@k and MRR over every task triple of a split."""
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}, got {task!r}")
    engine_name = _engine_name(engine)
    bow = bow or BowParams()
    part = bundle.split(split)
    tasks = sorted(
        part.task_triples, key=lambda t: (t.mention, t.relation, t.vertex, t.direction)
    )

    if task == RANKING:
        diagnostics = _evaluate_ranking(
            engine, bundle, split, tasks, subsample_ranking, seed, bow
        )
    else:
        diagnostics = _evaluate_linking(engine, bundle, tasks, ctx_per_mention, seed, bow)

    n = len(diagnostics)
    hits = {
        k: (sum(1 for d in diagnostics if not d.missed and d.rank <= k) / n if n else 0.0)
        for k in ks
    }
    mrr = sum(d.contribution for d in diagnostics) / n if n else 0.0
    return EvalReport(
        task=task,
        split=split,
        engine=engine_name,
        hits=hits,
        mrr=mrr,
        query_count=n,
        diagnostics=tuple(diagnostics),
        subsample_ranking=subsample_ranking,
        ctx_per_mention=ctx_per_mention,
        seed=seed,
    )


def _diagnostic(task_triple, outcome: FilteredRank) -> QueryDiagnostic:
    return QueryDiagnostic(
        mention=task_triple.mention,
        relation=task_triple.relation,
        vertex=task_triple.vertex,
        direction=task_triple.direction,
        rank=outcome.rank,
        missed=outcome.missed,
        contribution=0.0 if outcome.missed else 1.0 / outcome.rank,
    )


def _evaluate_ranking(engine, bundle, split, tasks, subsample, seed, bow):
    part = bundle.split(split)
    mention_of = {cid: rec.mention for cid, rec in part.contexts.with_ids()}
    # canonical store order, matching the neural path's candidate draw
    all_ids = [cid for cid, _ in part.contexts.with_ids()]
    if isinstance(engine, InvertedIndex):
        if engine.kind != "context-doc":
            raise ValueError("ranking needs an index over context documents")
        if set(engine.doc_lengths) != set(all_ids):
            raise ValueError("index does not cover this split's contexts")
    truths_by_query: dict[tuple, set[MentionId]] = {}
    for t in tasks:
        truths_by_query.setdefault((t.vertex, t.relation, t.direction), set()).add(t.mention)

    rankings: dict[tuple, RankedList] = {}
    diagnostics = []
    for t in tasks:
        key = (t.vertex, t.relation, t.direction)
        if key not in rankings:
            if isinstance(engine, OpenWorldModel):
                contexts = rank_contexts_neural(
                    engine, bundle, t.vertex, t.relation, t.direction,
                    subsample=subsample, seed=seed, split=split,
                )
            else:
                ranked = rank_contexts_bow(
                    bundle, engine, t.vertex, t.relation, t.direction,
                    n_repr=bow.n_repr, n_ctx=bow.n_ctx, seed=seed,
                )
                # the index ranks all of Q; enforce the subsample afterwards
                rng = _query_rng(seed, t.vertex, t.relation, t.direction)
                keep = set(_draw_ids(all_ids, subsample, rng))
                contexts = RankedList(
                    items=tuple((cid, s) for cid, s in ranked if cid in keep)
                )
            rankings[key] = contexts_to_mentions(contexts, mention_of)
        outcome = target_filtered_rank(
            rankings[key], frozenset(truths_by_query[key]), t.mention
        )
        diagnostics.append(_diagnostic(t, outcome))
    return diagnostics


def _evaluate_linking(engine, bundle, tasks, ctx_per_mention, seed, bow):
    truths_by_query: dict[tuple, set[VertexId]] = {}
    for t in tasks:
        truths_by_query.setdefault((t.mention, t.relation, t.direction), set()).add(t.vertex)

    rankings: dict[tuple, RankedList] = {}
    diagnostics = []
    for t in tasks:
        key = (t.mention, t.relation, t.direction)
        if key not in rankings:
            if isinstance(engine, OpenWorldModel):
                rankings[key] = link_rank_neural(
                    engine, bundle, t.mention, t.relation, t.direction,
                    ctx_per_mention=ctx_per_mention, seed=seed,
                )
            else:
                if engine.kind != "vertex-doc":
                    raise ValueError("linking needs an index over vertex documents")
                ranked = link_mention_bow(
                    bundle, engine, t.mention, t.relation, t.direction,
                    n_ctx=bow.n_ctx, top_n=bow.top_n, seed=seed,
                )
                rankings[key] = RankedList(items=tuple(ranked))
        outcome = target_filtered_rank(
            rankings[key], frozenset(truths_by_query[key]), t.vertex
        )
        diagnostics.append(_diagnostic(t, outcome))
    return diagnostics


def write_report(report: EvalReport, path: str | Path) -> None:
    """One metric per line, tab-separated key and value."""
    lines = [
        f"task\t{report.task}",
        f"split\t{report.split}",
        f"engine\t{report.engine}",
        f"queries\t{report.query_count}",
    ]
    for k in sorted(report.hits):
        lines.append(f"hits@{k}\t{report.hits[k]:.6f}")
    lines.append(f"mrr\t{report.mrr:.6f}")
    lines.append(f"subsample-ranking\t{report.subsample_ranking}")
    lines.append(f"ctx-per-mention\t{report.ctx_per_mention}")
    lines.append(f"seed\t{report.seed}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("\t")
        out[key] = value
    return out


def write_diagnostics(report: EvalReport, path: str | Path) -> None:
    """Per-query TSV next to the summary, one row per task triple."""
    lines = ["# mention, relation, vertex, direction, rank, missed, contribution"]
    for d in report.diagnostics:
        missed = "yes" if d.missed else "no"
        lines.append(
            f"{d.mention}\t{d.relation}\t{d.vertex}\t{d.direction}"
            f"\t{d.rank}\t{missed}\t{d.contribution:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
