import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmumt.corpus import build_vocab
from lmumt.lm import KneserNeyLM
from lmumt.seq2seq import init_model
from lmumt.weighting import (WeightedPair, normalize_weights, raw_log_weight, raw_log_weights, read_synthetic,
                             weigh_batch, write_inspection, write_synthetic)


class FixedLM:
    def __init__(self, scores):
        self.scores = scores

    def sentence_log_prob(self, s):
        return self.scores[tuple(s)]


class FixedModel:
    def __init__(self, cond, marg):
        self.cond, self.marg = cond, marg

    def log_prob_batch(self, xs, ys):
        return np.array([self.cond[(tuple(x), tuple(y))] for x, y in zip(xs, ys)])

    def decoder_lm_log_prob_batch(self, ys):
        return np.array([self.marg[tuple(y)] for y in ys])


def fixed_setup(log_py=-3.0, log_py_model=-5.0, log_px=-4.0, log_pyx=-2.5):
    x, y = ("a", "b"), ("c",)
    return (list(x), list(y), FixedLM({x: log_px}), FixedLM({y: log_py}),
            FixedModel({(x, y): log_pyx}, {y: log_py_model}))


def test_raw_weight_is_sum_of_components():
    x, y, lm_x, lm_y, fwd = fixed_setup()
    p = raw_log_weight(x, y, lm_x, lm_y, fwd)
    assert p.components == (-3.0, -5.0, -4.0, -2.5)
    assert p.log_w_raw == pytest.approx(-3.0 + 5.0 - 4.0 - 2.5, abs=1e-12)


def test_ratio_cancels_when_lms_agree():
    x, y, lm_x, lm_y, fwd = fixed_setup(log_py=-5.0, log_py_model=-5.0)
    assert raw_log_weight(x, y, lm_x, lm_y, fwd).log_w_raw == pytest.approx(-4.0 - 2.5, abs=1e-12)


def test_raising_log_py_shifts_weight_by_delta():
    base = raw_log_weight(*fixed_setup()).log_w_raw
    assert raw_log_weight(*fixed_setup(log_py=-3.0 + 0.7)).log_w_raw == pytest.approx(base + 0.7, abs=1e-12)


def test_normalize_closed_forms():
    np.testing.assert_allclose(normalize_weights([2.0, 2.0, 2.0]), 0.5, atol=1e-12)
    np.testing.assert_allclose(normalize_weights([-1.0, 0.0, 1.0]), [0.26894, 0.5, 0.73106], atol=1e-5)


def test_normalize_errors_name_the_index():
    with pytest.raises(ValueError, match="1"):
        normalize_weights([0.0, float("nan"), 1.0])
    with pytest.raises(ValueError):
        normalize_weights([])


def test_saturated_inputs_stay_strictly_inside_unit_interval():
    w = normalize_weights([-2000.0, 0.0, 2000.0])
    assert np.all((w > 0) & (w < 1))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=40), st.floats(-1e3, 1e3))
def test_shift_invariance_range_and_order(v, c):
    w = normalize_weights(v)
    np.testing.assert_allclose(normalize_weights(np.array(v) + c), w, atol=1e-9)
    assert np.all((w > 0) & (w < 1))
    order = np.argsort(v, kind="stable")
    assert np.all(np.diff(w[order]) >= 0)


@pytest.fixture(scope="module")
def small_models():
    corpus_x = [["a", "b"], ["b", "c", "a"], ["c"]] * 5
    corpus_y = [["p", "q"], ["q", "p", "p"], ["p"]] * 5
    lm_x = KneserNeyLM(order=2).fit(corpus_x)
    lm_y = KneserNeyLM(order=2).fit(corpus_y)
    fwd = init_model(build_vocab(corpus_x), build_vocab(corpus_y), d_m=6, seed=0)
    pairs = [WeightedPair(x, y) for x, y in zip(corpus_x[:3], corpus_y[:3])]
    return lm_x, lm_y, fwd, pairs


def test_real_model_components(small_models):
    lm_x, lm_y, fwd, pairs = small_models
    p = raw_log_weights([pairs[1].x], [pairs[1].y], lm_x, lm_y, fwd)[0]
    a, b, c, d = p.components
    assert a == lm_y.sentence_log_prob(p.y)
    assert b == fwd.decoder_lm_log_prob(p.y)
    assert c == lm_x.sentence_log_prob(p.x)
    assert d == fwd.log_prob(p.x, p.y)
    assert p.log_w_raw == pytest.approx(a - b + c + d, abs=1e-9)


def test_weigh_batch_modes(small_models):
    lm_x, lm_y, fwd, pairs = small_models
    uni = weigh_batch(pairs, lm_x, lm_y, fwd, mode="uniform")
    assert [p.w_star for p in uni] == [1.0] * len(pairs)
    wtd = weigh_batch(pairs, lm_x, lm_y, fwd, mode="weighted")
    assert all(0 < p.w_star < 1 for p in wtd)
    zm = np.array([p.log_w_raw for p in wtd])
    assert (zm - zm.mean()).mean() == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ValueError):
        weigh_batch([], lm_x, lm_y, fwd)
    with pytest.raises(ValueError):
        weigh_batch(pairs, lm_x, lm_y, fwd, mode="other")


def test_uniform_loss_equals_weighted_loss_with_unit_weights(small_models):
    lm_x, lm_y, fwd, pairs = small_models
    uni = weigh_batch(pairs, lm_x, lm_y, fwd, mode="uniform")
    forced = [WeightedPair(p.x, p.y, p.log_w_raw, 1.0) for p in weigh_batch(pairs, lm_x, lm_y, fwd)]
    args = lambda ps: ([p.x for p in ps], [p.y for p in ps], [p.w_star for p in ps])  # noqa: E731
    assert fwd.loss_and_grads(*args(uni))[0] == fwd.loss_and_grads(*args(forced))[0]


def test_dump_files(tmp_path, small_models):
    lm_x, lm_y, fwd, pairs = small_models
    wtd = weigh_batch(pairs, lm_x, lm_y, fwd)
    write_inspection(tmp_path / "w.tsv", wtd)
    rows = [line.split("\t") for line in (tmp_path / "w.tsv").read_text().splitlines()]
    assert len(rows) == len(wtd) and all(len(r) == 7 for r in rows)
    assert float(rows[0][6]) == wtd[0].w_star
    write_synthetic(tmp_path / "s.tsv", wtd)
    back = read_synthetic(tmp_path / "s.tsv")
    assert [(p.x, p.y, p.w_star) for p in back] == [(p.x, p.y, p.w_star) for p in wtd]
