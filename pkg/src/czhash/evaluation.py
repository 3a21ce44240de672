"""Mean average precision and precision@r for cross-modal retrieval."""

from __future__ import annotations

import json
from fractions import Fraction
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import UndefinedAPError
from .retrieval import HammingIndex, HashCodes


@dataclass(frozen=True, eq=False)
class RelevanceJudgment:
    relevant: np.ndarray  # booleans in ranked order

    @property
    def t(self) -> int:
        return int(np.count_nonzero(self.relevant))


@dataclass
class EvalReport:
    map: float
    precision_at: dict[int, float]
    per_query_ap: list[float]
    direction: str
    bits: int
    scenario: str = ""
    skipped_queries: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        data = asdict(self)
        data["precision_at"] = {str(k): v for k, v in self.precision_at.items()}
        return json.dumps(data, indent=1)


def average_precision(relevance, t: int | None = None) -> float:
    """Mean of precision@r over the ranks r holding a relevant item.

    Summed in exact rationals, so the result is the correctly rounded float.
    """
    rel = np.asarray(relevance, dtype=bool)
    count = int(rel.sum())
    if t is None:
        t = count
    if t != count:
        raise ValueError(f"t={t} but the list holds {count} relevant items")
    if t == 0:
        raise UndefinedAPError("average precision is undefined without relevant items")
    ranks = np.flatnonzero(rel) + 1
    total = sum(Fraction(k, int(r)) for k, r in enumerate(ranks, start=1))
    return float(total / t)


def map_score(queries: Sequence[RelevanceJudgment]) -> float:
    """MAP over the queries that have at least one relevant item."""
    aps = [average_precision(q.relevant) for q in queries if q.t > 0]
    if not aps:
        raise UndefinedAPError("no query has a relevant item")
    return float(np.mean(aps))


def judge_relevance(query_labels, db_labels) -> RelevanceJudgment:
    """An item is relevant when it shares at least one label with the query."""
    q = frozenset(query_labels)
    if not q:
        raise ValueError("query label set must be non-empty")
    return RelevanceJudgment(np.array([bool(q & frozenset(s)) for s in db_labels], dtype=bool))


def relevance_matrix(query_labels, db_labels) -> np.ndarray:
    """Boolean ``(queries, items)`` matrix of shared-label relevance."""
    vocab = {lab: k for k, lab in enumerate(sorted(set().union(*query_labels, *db_labels)))}

    def indicator(sets):
        out = np.zeros((len(sets), len(vocab)), dtype=np.float64)
        for i, s in enumerate(sets):
            for lab in s:
                out[i, vocab[lab]] = 1.0
        return out

    return (indicator(query_labels) @ indicator(db_labels).T) > 0


def ranked_average_precision(ranked_rel: np.ndarray, top_k: int | None = None) -> np.ndarray:
    """Per-row AP of a ``(queries, items)`` boolean matrix already in ranked order.

    Rows without a relevant item give NaN.
    """
    rel = ranked_rel[:, :top_k] if top_k is not None else ranked_rel
    hits = np.cumsum(rel, axis=1)
    ranks = np.arange(1, rel.shape[1] + 1)
    t = hits[:, -1] if rel.shape[1] else np.zeros(rel.shape[0])
    with np.errstate(invalid="ignore", divide="ignore"):
        ap = np.sum((hits / ranks) * rel, axis=1) / t
    return np.where(t > 0, ap, np.nan)


def evaluate_codes(
    query_codes,
    db_codes,
    query_labels,
    db_labels,
    direction: str = "",
    bits: int | None = None,
    scenario: str = "",
    top_k: int | None = None,
    precision_at: Sequence[int] = (10, 100),
) -> EvalReport:
    """Rank the database for every query and score MAP and precision@r.

    Database ids are row positions.  Queries with an empty label set, or
    without any relevant database item, are skipped and counted in
    ``skipped_queries``.
    """
    index = HammingIndex(HashCodes.from_codes(db_codes))
    keep = [k for k, s in enumerate(query_labels) if s]
    q = np.atleast_2d(np.asarray(query_codes))[keep]
    rel = relevance_matrix([query_labels[k] for k in keep], db_labels)
    ranked_rel = np.take_along_axis(rel, index.rank(q), axis=1)
    aps = ranked_average_precision(ranked_rel, top_k)
    valid = ~np.isnan(aps)
    if not valid.any():
        raise UndefinedAPError("no query has a relevant item")
    prec = {
        int(r): float(ranked_rel[valid, : min(r, ranked_rel.shape[1])].mean())
        for r in precision_at
    }
    return EvalReport(
        map=float(aps[valid].mean()),
        precision_at=prec,
        per_query_ap=[float(x) for x in aps[valid]],
        direction=direction,
        bits=int(bits if bits is not None else index.codes.bits),
        scenario=scenario,
        skipped_queries=len(query_labels) - int(valid.sum()),
    )
