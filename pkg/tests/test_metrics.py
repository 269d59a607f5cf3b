import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from nast.metrics import (
    InvalidTraceError,
    PolicyRecord,
    average_lagging,
    corpus_bleu,
    cross_count,
    format_report,
    hallucination_rate,
    latency_metrics,
    partition_by_difficulty,
)


def test_wait1_and_full_sentence():
    m = latency_metrics(PolicyRecord([1, 2, 3], 3, 3))
    assert m == pytest.approx({"AL": 1.0, "AP": 2 / 3, "CW": 1.0, "DAL": 1.0})
    m = latency_metrics(PolicyRecord([3, 3, 3], 3, 3))
    assert m == pytest.approx({"AL": 3.0, "AP": 1.0, "CW": 3.0, "DAL": 3.0})
    m = latency_metrics(PolicyRecord([1], 1, 1))
    assert m == pytest.approx({"AL": 1.0, "AP": 1.0, "CW": 1.0, "DAL": 1.0})


def test_invalid_records():
    with pytest.raises(InvalidTraceError):
        PolicyRecord([2, 1], 3, 2)
    with pytest.raises(InvalidTraceError):
        PolicyRecord([0, 1], 3, 2)
    with pytest.raises(InvalidTraceError):
        PolicyRecord([1, 4], 3, 2)
    with pytest.raises(InvalidTraceError):
        latency_metrics(PolicyRecord([1, 2], 3, 2))


def test_unterminated_policy_non_strict():
    assert average_lagging(PolicyRecord([1, 2], 3, 2), strict=False) == pytest.approx((1 + (2 - 1.5)) / 2)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_wait_k_al_approaches_k(k):
    n = 400
    g = [min(t + k - 1, n) for t in range(1, n + 1)]
    assert average_lagging(PolicyRecord(g, n, n)) == pytest.approx(k, abs=0.05)


def test_dal_equals_al_for_unit_steps():
    n = 7
    m = latency_metrics(PolicyRecord(list(range(1, n + 1)), n, n))
    assert m["DAL"] == pytest.approx(m["AL"])


def test_bleu_examples():
    refs = [["a", "b", "c", "d"], ["x", "y"]]
    assert corpus_bleu(refs, refs) == pytest.approx(100.0)
    assert corpus_bleu([[], []], refs) == 0.0
    assert corpus_bleu([["a", "b", "c", "d"]], [["a", "b", "c", "d", "e"]]) == pytest.approx(100 * math.exp(1 - 5 / 4), abs=1e-9)
    assert corpus_bleu([["a", "b", "c", "d"]], [["a", "b", "c", "d", "e"]]) == pytest.approx(77.88, abs=0.01)


def test_bleu_errors():
    with pytest.raises(ValueError):
        corpus_bleu([], [])
    with pytest.raises(ValueError):
        corpus_bleu([["a"]], [])


def test_hallucination_examples():
    # 0-based links: tokens 0 and 2 covered
    assert hallucination_rate(3, [(0, 0), (2, 1)]) == pytest.approx(1 / 3)
    assert hallucination_rate(3, [(0, 0), (1, 0), (2, 2)]) == 0.0
    assert hallucination_rate(3, []) == 1.0
    with pytest.raises(ValueError):
        hallucination_rate(2, [(2, 0)])


def test_cross_count_examples():
    assert cross_count([(1, 2), (2, 1)]) == 1
    assert cross_count([(i, i) for i in range(6)]) == 0
    assert cross_count([(1, 3), (2, 2), (3, 1)]) == 3


@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8)), max_size=8))
def test_cross_count_order_preserving_relabel(links):
    relabeled = [(3 * t + 1, 2 * s + 5) for t, s in links]
    assert cross_count(relabeled) == cross_count(links)


def test_partition_thirds_stable():
    sets = [[(0, 1), (1, 0)], [], [(0, 0)], [(0, 2), (1, 1), (2, 0)], [], [(0, 1), (1, 0)]]
    parts = partition_by_difficulty(sets)
    assert parts == {"easy": [1, 2], "medium": [4, 0], "hard": [5, 3]}


def test_report_format():
    assert format_report({"BLEU": 1.5, "n": 3}) == "BLEU = 1.5000\nn = 3\n"
