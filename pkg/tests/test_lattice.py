import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import log_rows, log_uniform
from nast.lattice import (
    DegenerateTargetError,
    InfeasibleAlignmentError,
    alignment_log_prob,
    bigram_table,
    clip_latency,
    collapse,
    ctc_log_likelihood_batch,
    ctc_log_prob,
    expected_al,
    expected_al_batch,
    expected_bigram_counts,
    expected_lag_terms,
    is_feasible,
    latency_loss,
    min_alignment_length,
    nmla_loss,
    reservation_probs,
    viterbi_alignment,
    viterbi_batch,
)
from nast.oracle import enumerate_oracle

A, B = 1, 2

# Seeded 6x4 posterior; reference numbers below came from brute-force
# enumeration over all 4**6 alignments and are frozen.
FROZEN_SEED = 1234
FROZEN = {
    "log_marginal_131": -2.913900968091725,
    "bigram_13": 0.7398863852527565,
    "bigram_22": 0.005458939883449271,
    "tau_lam2_src3_k0": 3.2787284407741746,
    "lag_lam2_src3_k1": 8.088671588360624,
    "viterbi_131": [1, 1, 3, 1, 1, 1],
    "viterbi_131_score": -3.668183487373379,
}


def frozen_posterior():
    rng = np.random.default_rng(FROZEN_SEED)
    x = rng.normal(0, 1.5, size=(6, 4))
    return torch.as_tensor(x - np.log(np.exp(x).sum(1, keepdims=True)))


def random_lp(rng, T, V, scale=2.0):
    return torch.log_softmax(torch.as_tensor(rng.normal(0, scale, size=(T, V))), -1)


# -- collapse ---------------------------------------------------------------


def test_collapse_examples():
    assert collapse([A, A, 0, B]) == [A, B]
    assert collapse([0, 0, 0]) == []
    assert collapse([A, 0, A]) == [A, A]


@given(st.lists(st.integers(0, 4), max_size=20))
def test_collapse_idempotent_on_blank_free(a):
    out = collapse(a)
    assert 0 not in out
    assert collapse(out) == [t for i, t in enumerate(out) if i == 0 or out[i - 1] != t]
    assert len(out) <= len(a)


def test_min_alignment_length():
    assert min_alignment_length([A, A, B]) == 4
    assert min_alignment_length([]) == 0
    assert is_feasible([A, A], 3) and not is_feasible([A, A], 2)


# -- marginal likelihood ----------------------------------------------------


def test_ctc_worked_examples():
    lp = log_uniform(2, 2)
    assert float(ctc_log_prob([A], lp)) == pytest.approx(math.log(0.75), abs=1e-12)
    assert float(ctc_log_prob([], lp)) == pytest.approx(math.log(0.25), abs=1e-12)
    assert float(ctc_log_prob([A, A], lp)) == -math.inf


def test_ctc_frozen():
    assert float(ctc_log_prob([1, 3, 1], frozen_posterior())) == pytest.approx(FROZEN["log_marginal_131"], abs=1e-12)


def test_ctc_rejects_blank_in_target():
    with pytest.raises(ValueError):
        ctc_log_prob([A, 0], log_uniform(3, 3))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(2, 4), st.integers(0, 10**6))
def test_ctc_matches_enumeration(T, V, seed):
    rng = np.random.default_rng(seed)
    lp = random_lp(rng, T, V)
    y = rng.integers(1, V, size=int(rng.integers(0, T + 1))).tolist()
    want = enumerate_oracle(lp, "marginal", y=y)
    got = float(ctc_log_prob(y, lp).exp())
    assert got == pytest.approx(want, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 10**6))
def test_marginals_sum_to_one(T, seed):
    """Summing p(y) over every collapsible y gives 1."""
    from itertools import product

    rng = np.random.default_rng(seed)
    V = 3
    lp = random_lp(rng, T, V)
    targets = {tuple(collapse(a)) for a in product(range(V), repeat=T)}
    total = sum(float(ctc_log_prob(list(y), lp).exp()) for y in targets)
    assert total == pytest.approx(1.0, abs=1e-10)


def test_batch_matches_single_and_marks_infeasible():
    rng = np.random.default_rng(3)
    lp = torch.stack([random_lp(rng, 6, 4) for _ in range(3)])
    targets = [[1, 2], [3, 3, 3, 3], [1]]
    ll = ctc_log_likelihood_batch(lp, [6, 6, 4], targets)
    assert float(ll[0]) == pytest.approx(float(ctc_log_prob([1, 2], lp[0])))
    assert ll[1] == -math.inf
    assert float(ll[2]) == pytest.approx(float(ctc_log_prob([1], lp[2, :4])))


def test_ctc_gradient_is_finite_for_peaked_posteriors():
    logits = torch.tensor([[30.0, -30.0, 0.0], [-30.0, 30.0, 0.0], [0.0, 0.0, 30.0]], dtype=torch.float64, requires_grad=True)
    loss = -ctc_log_prob([2, 1], torch.log_softmax(logits, -1))
    loss.backward()
    assert torch.isfinite(logits.grad).all()


# -- Viterbi ----------------------------------------------------------------


def test_viterbi_worked_example():
    lp = log_rows([[0.4, 0.6], [0.7, 0.3]])
    assert viterbi_alignment([A], lp) == [A, 0]
    assert viterbi_alignment([A], log_rows([[0.9, 0.1]])) == [A]


def test_viterbi_frozen():
    lp = frozen_posterior()
    path = viterbi_alignment([1, 3, 1], lp)
    assert path == FROZEN["viterbi_131"]
    assert alignment_log_prob(path, lp) == pytest.approx(FROZEN["viterbi_131_score"], abs=1e-12)


def test_viterbi_infeasible():
    with pytest.raises(InfeasibleAlignmentError):
        viterbi_alignment([A, A], log_uniform(2, 2))
    paths, scores = viterbi_batch(log_uniform(2, 2).unsqueeze(0), [2], [[A, A]])
    assert paths == [None] and scores[0] == -math.inf


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(2, 4), st.integers(0, 10**6))
def test_viterbi_is_optimal(T, V, seed):
    rng = np.random.default_rng(seed)
    lp = random_lp(rng, T, V)
    y = rng.integers(1, V, size=int(rng.integers(0, T + 1))).tolist()
    if not is_feasible(y, T):
        return
    path = viterbi_alignment(y, lp)
    assert collapse(path) == y
    _, best = enumerate_oracle(lp, "argmax", y=y)
    assert alignment_log_prob(path, lp) == pytest.approx(best, abs=1e-10)


# -- bigram counts and matching loss ------------------------------------------


def test_bigram_worked_examples():
    counts = expected_bigram_counts([(A, B)], log_uniform(3, 3))
    assert float(counts[(A, B)]) == pytest.approx(7 / 27, abs=1e-12)
    assert float(expected_bigram_counts([(A, A)], log_uniform(2, 3))[(A, A)]) == 0.0
    assert float(expected_bigram_counts([(A, B)], log_uniform(1, 3))[(A, B)]) == 0.0


def test_bigram_frozen():
    counts = expected_bigram_counts([(1, 3), (2, 2)], frozen_posterior())
    assert float(counts[(1, 3)]) == pytest.approx(FROZEN["bigram_13"], abs=1e-12)
    assert float(counts[(2, 2)]) == pytest.approx(FROZEN["bigram_22"], abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 7), st.integers(2, 4), st.integers(0, 10**6))
def test_bigram_matches_enumeration(T, V, seed):
    rng = np.random.default_rng(seed)
    lp = random_lp(rng, T, V)
    grams = {(int(a), int(b)) for a, b in rng.integers(1, V, size=(3, 2))}
    counts = expected_bigram_counts(grams, lp)
    for g in grams:
        assert float(counts[g]) == pytest.approx(enumerate_oracle(lp, "bigram", bigram=g), abs=1e-10)


def test_bigram_table_reference_counts():
    table = bigram_table([A, B, A, B], log_uniform(6, 3))
    d = table.as_dict()
    assert d[(A, B)][0] == 2 and d[(B, A)][0] == 1


def test_nmla_worked_examples():
    assert float(nmla_loss([A, B], log_uniform(3, 3))) == pytest.approx(-7 / 17, abs=1e-12)
    eye = torch.full((3, 3), 1e-300, dtype=torch.float64)
    for t, v in enumerate([A, 0, B]):
        eye[t, v] = 1.0
    assert float(nmla_loss([A, B], eye.log())) == pytest.approx(-1.0, abs=1e-9)
    blank = torch.full((3, 3), 1e-300, dtype=torch.float64)
    blank[:, 0] = 1.0
    assert float(nmla_loss([A, B], blank.log())) == pytest.approx(0.0, abs=1e-9)


def test_nmla_needs_two_tokens():
    with pytest.raises(DegenerateTargetError):
        nmla_loss([A], log_uniform(3, 3))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10**6))
def test_nmla_bounded(T, seed):
    rng = np.random.default_rng(seed)
    lp = random_lp(rng, T, 4)
    y = rng.integers(1, 4, size=2).tolist()
    val = float(nmla_loss(y, lp))
    assert -1.0 - 1e-12 <= val <= 0.0


# -- reservation and expected lagging ----------------------------------------


def test_reservation_worked_examples():
    r = reservation_probs(log_rows([[0.5, 0.1, 0.4], [0.2, 0.5, 0.3]]))
    assert float(r[1]) == pytest.approx(0.63, abs=1e-12)
    assert float(r[0]) == pytest.approx(0.5, abs=1e-12)
    assert float(reservation_probs(log_rows([[0.4, 0.6]]))[0]) == pytest.approx(0.6)
    assert float(reservation_probs(log_rows([[0.3, 0.7], [1.0, 1e-300]]))[1]) == pytest.approx(0.0, abs=1e-12)


def test_expected_lag_frozen():
    lp = frozen_posterior()
    tau, _ = expected_lag_terms(lp, 2, 3, 0)
    _, lag = expected_lag_terms(lp, 2, 3, 1)
    assert float(tau) == pytest.approx(FROZEN["tau_lam2_src3_k0"], abs=1e-12)
    assert float(lag) == pytest.approx(FROZEN["lag_lam2_src3_k1"], abs=1e-12)


def _point_mass(rows, V):
    t = torch.full((len(rows), V), 1e-300, dtype=torch.float64)
    for i, v in enumerate(rows):
        t[i, v] = 1.0
    return t.log()


def test_expected_al_substitution_examples():
    # |x|=2, lam=1: one position before the last chunk, always reserved
    assert float(expected_al(_point_mass([A, B], 3), 1, 2)) == pytest.approx(1.0, abs=1e-12)
    # |x|=3, lam=1: reservation (1, 1), moments (1, 2)
    assert float(expected_al(_point_mass([A, B, A], 3), 1, 3)) == pytest.approx(0.75, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(2, 4), st.integers(0, 2), st.integers(0, 10**6))
def test_expected_lag_terms_match_enumeration(lam, src_len, k, seed):
    T = lam * src_len
    if T > 8:
        return
    rng = np.random.default_rng(seed)
    lp = random_lp(rng, T, 3)
    tau, lag = expected_lag_terms(lp, lam, src_len, k)
    assert float(tau) == pytest.approx(enumerate_oracle(lp, "tau", lam=lam, src_len=src_len, k=k), abs=1e-10)
    assert float(lag) == pytest.approx(enumerate_oracle(lp, "lag_sum", lam=lam, src_len=src_len, k=k), abs=1e-10)


def test_expected_al_batch_matches_single():
    rng = np.random.default_rng(5)
    lp = torch.stack([random_lp(rng, 9, 4) for _ in range(2)])
    batch = expected_al_batch(lp, [3, 2], 3)
    assert float(batch[0]) == pytest.approx(float(expected_al(lp[0], 3, 3)))
    assert float(batch[1]) == pytest.approx(float(expected_al(lp[1, :6], 3, 2)))


def test_latency_loss_clipping():
    al = torch.tensor(2.5, dtype=torch.float64, requires_grad=True)
    out = clip_latency(al, 3.0)
    out.backward()
    assert out.item() == 3.0 and float(al.grad) == 0.0
    al = torch.tensor(4.0, dtype=torch.float64, requires_grad=True)
    out = clip_latency(al, 3.0)
    out.backward()
    assert out.item() == 4.0 and float(al.grad) == 1.0
    lp = random_lp(np.random.default_rng(2), 6, 3)
    assert float(latency_loss(lp, -math.inf, 2, 3)) == pytest.approx(float(expected_al(lp, 2, 3)))
