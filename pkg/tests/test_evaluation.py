import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from czhash.errors import UndefinedAPError
from czhash.evaluation import (
    RelevanceJudgment,
    average_precision,
    evaluate_codes,
    judge_relevance,
    map_score,
    ranked_average_precision,
    relevance_matrix,
)


def naive_ap(relevance):
    """Straight loop over the ranked list."""
    hits, total = 0, 0.0
    for r, rel in enumerate(relevance, start=1):
        if rel:
            hits += 1
            total += hits / r
    return total / hits


def expected_random_ap(n, t):
    """Exact mean AP of a uniformly random ranking with t relevant of n."""
    h = sum(1.0 / r for r in range(1, n + 1))
    return (h + (t - 1) / (n - 1) * (n - h)) / n


def test_ap_hand_example():
    assert average_precision([1, 0, 1]) == 5 / 6


def test_ap_all_relevant_is_one():
    assert average_precision([1] * 7) == 1.0


@pytest.mark.parametrize("r", [1, 2, 5, 40])
def test_single_relevant_item(r):
    rel = np.zeros(50, dtype=bool)
    rel[r - 1] = True
    assert average_precision(rel) == pytest.approx(1 / r, abs=1e-15)


def test_ap_rejects_undefined_and_inconsistent():
    with pytest.raises(UndefinedAPError):
        average_precision([0, 0, 0])
    with pytest.raises(ValueError):
        average_precision([1, 0, 1], t=3)


def test_map_of_two_queries():
    queries = [RelevanceJudgment(np.array([1, 0, 0], bool)), RelevanceJudgment(np.array([0, 1], bool))]
    assert map_score(queries) == pytest.approx(0.75)


def test_map_skips_queries_without_relevant_items():
    queries = [RelevanceJudgment(np.array([1, 0], bool)), RelevanceJudgment(np.zeros(2, bool))]
    assert map_score(queries) == 1.0
    with pytest.raises(UndefinedAPError):
        map_score(queries[1:])


@settings(max_examples=200)
@given(st.lists(st.booleans(), min_size=1, max_size=60).filter(any))
def test_vectorised_ap_matches_loop(rel):
    vec = ranked_average_precision(np.array([rel]))[0]
    assert abs(vec - naive_ap(rel)) <= 1e-12
    assert abs(average_precision(rel) - naive_ap(rel)) <= 1e-12


def test_vectorised_marks_empty_rows_nan():
    out = ranked_average_precision(np.array([[0, 0, 0], [0, 1, 0]], bool))
    assert np.isnan(out[0]) and out[1] == 0.5


def test_random_ranking_ap_is_near_base_rate():
    n, t = 400, 40
    maps = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        rows = np.zeros((20, n), dtype=bool)
        for row in rows:
            row[rng.choice(n, t, replace=False)] = True
        maps.append(ranked_average_precision(rows).mean())
    maps = np.array(maps)
    sem = maps.std(ddof=1) / np.sqrt(len(maps))
    assert abs(maps.mean() - expected_random_ap(n, t)) <= 3 * sem
    # the exact expectation sits close to the base rate t/n
    assert abs(expected_random_ap(n, t) - t / n) < 0.02


def test_judge_relevance():
    j = judge_relevance({"a", "b"}, [{"b"}, {"c"}, {"a", "c"}, set()])
    np.testing.assert_array_equal(j.relevant, [True, False, True, False])
    assert j.t == 2
    with pytest.raises(ValueError):
        judge_relevance(set(), [{"a"}])


def test_relevance_matrix_matches_judgments():
    q = [frozenset("ab"), frozenset("c")]
    db = [frozenset("a"), frozenset("cd"), frozenset("e")]
    m = relevance_matrix(q, db)
    for i, labels in enumerate(q):
        np.testing.assert_array_equal(m[i], judge_relevance(labels, db).relevant)


def test_evaluate_codes_hand_case():
    db = np.array([[1, 1], [1, -1], [-1, -1]])
    query = np.array([[1, 1], [-1, -1], [1, 1]])
    labels_q = [{"a"}, {"b"}, set()]
    labels_db = [{"a"}, {"b"}, {"a"}]
    rep = evaluate_codes(query, db, labels_q, labels_db, direction="1->2")
    # q0 ranks 0,1,2 -> hits at 1 and 3 -> (1 + 2/3)/2; q1 ranks 2,1,0 -> hit at 2 -> 1/2
    assert rep.per_query_ap == pytest.approx([5 / 6, 1 / 2])
    assert rep.map == pytest.approx(2 / 3)
    assert rep.skipped_queries == 1
    assert rep.bits == 2
    assert json.loads(rep.to_json())["direction"] == "1->2"


def test_evaluate_codes_top_k_and_precision():
    db = np.array([[1, 1], [1, -1], [-1, -1]])
    rep = evaluate_codes(np.array([[1, 1]]), db, [{"a"}], [{"b"}, {"a"}, {"a"}], top_k=2,
                         precision_at=(1, 2, 10))
    assert rep.map == 0.5
    assert rep.precision_at == {1: 0.0, 2: 0.5, 10: pytest.approx(2 / 3)}


def test_evaluate_codes_without_any_relevant_item():
    with pytest.raises(UndefinedAPError):
        evaluate_codes(np.ones((1, 2)), np.ones((2, 2)), [{"a"}], [{"b"}, {"c"}])
