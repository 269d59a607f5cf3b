import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from nast.data import synth_generate
from nast.estimator import NASTTranslator, check_pairs, check_sequences


def tiny(**kw):
    params = dict(embed_dim=16, heads=2, ffn_dim=32, max_positions=24, stage1_steps=5, batch_tokens=128, warmup=2)
    params.update(kw)
    return NASTTranslator(**params)


def test_sklearn_params_and_clone():
    est = tiny(k=2, l_min=1.5)
    params = est.get_params()
    assert params["k"] == 2 and params["l_min"] == 1.5
    other = clone(est)
    assert other.get_params() == params and other is not est
    est.set_params(lam=2)
    assert est.lam == 2


def test_check_sequences():
    assert check_sequences(["a b", ["c", "d"]]) == [["a", "b"], ["c", "d"]]
    with pytest.raises(TypeError):
        check_sequences("a b")
    with pytest.raises(ValueError):
        check_sequences([])
    with pytest.raises(ValueError):
        check_sequences(["a", ""])
    with pytest.raises(ValueError):
        check_pairs(["a"], ["b", "c"])


def test_not_fitted():
    with pytest.raises(NotFittedError):
        tiny().predict(["a b"])


def test_bad_params():
    with pytest.raises(ValueError):
        tiny(decode_mode="fuzzy").fit(["a"], ["a"])


def test_fit_predict_stream_and_warm_start():
    c = synth_generate("copy", 40, max_len=8, vocab_size=6, seed=0)
    src = c.src + [["w1"]]
    tgt = c.tgt + [["w1", "w1"]]  # needs 3 slots, only 2 at lam=2
    est = tiny(lam=2).fit(src, tgt)
    assert est.n_filtered_ == 1
    hyps = est.predict(c.src[:5])
    assert len(hyps) == 5
    fast, traces = est.stream(c.src[:5])
    slow, traces2 = est.stream(c.src[:5], incremental=True)
    assert fast == slow
    assert [t.events for t in traces] == [t.events for t in traces2]
    report = est.evaluate(c.src[:5], c.tgt[:5])
    assert set(report) >= {"BLEU", "exact_match", "AL", "AP", "CW", "DAL"}
    n = len(est.history_)
    cont = est.clone_fitted(warm_start=True, stage1_steps=0, stage2_steps=2)
    cont.fit(c.src, c.tgt)
    assert len(cont.history_) == n + 2 and cont.history_[-1]["stage"] == 2
    assert len(est.history_) == n
