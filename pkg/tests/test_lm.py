import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmumt.corpus import build_vocab, generate_toy_corpus
from lmumt.lm import KneserNeyLM, perplexity, sentence_log_prob, train_ngram


def brute_force_kn(corpus, vocab, order, discount):
    """Independent interpolated-KN calculator working from a flat list of n-gram occurrences."""
    bos, eos = vocab.bos_id, vocab.eos_id
    occurrences = []
    for sent in corpus:
        padded = [bos] * (order - 1) + [vocab.id(w) for w in sent] + [eos]
        occurrences += [tuple(padded[i - order + 1: i + 1]) for i in range(order - 1, len(padded))]
    suffix_types = {k: {g[-k:] for g in occurrences} for k in range(1, order + 1)}

    def count(gram):
        k = len(gram)
        if k == order:
            return sum(1 for g in occurrences if g == gram)
        return sum(1 for s in suffix_types[k + 1] if s[1:] == gram)

    def prob(word, ctx):
        lower = 1.0 / len(vocab) if not ctx else prob(word, ctx[1:])
        followers = [count(ctx + (w,)) for w in range(len(vocab))]
        total = sum(followers)
        if total == 0:
            return lower
        types = sum(1 for c in followers if c > 0)
        return (max(followers[word] - discount, 0) + discount * types * lower) / total

    return prob


TINY = [["a", "b", "a", "c"], ["b", "a", "c", "c"], ["a", "a", "b"], ["c", "b"]]


@pytest.mark.parametrize("order", [1, 2, 3])
def test_matches_brute_force_oracle(order):
    lm = KneserNeyLM(order=order, discount=0.75).fit(TINY)
    oracle = brute_force_kn(TINY, lm.vocab_, order, 0.75)
    ids = range(len(lm.vocab_))
    contexts = [()] if order == 1 else [c for c in
                                       ((a,) if order == 2 else (a, b) for a in ids for b in ids)]
    for ctx in contexts:
        for w in ids:
            assert math.exp(lm.token_log_prob(w, ctx)) == pytest.approx(oracle(w, tuple(ctx)), abs=1e-12)


def test_oracle_equivalence_on_random_50_token_corpus():
    rng = np.random.default_rng(7)
    corpus = [[str(t) for t in rng.integers(0, 6, size=rng.integers(1, 8))] for _ in range(10)]
    assert sum(len(s) for s in corpus) <= 50
    lm = KneserNeyLM(order=3).fit(corpus)
    oracle = brute_force_kn(corpus, lm.vocab_, 3, 0.75)
    for _ in range(200):
        ctx = tuple(int(i) for i in rng.integers(0, len(lm.vocab_), size=2))
        w = int(rng.integers(0, len(lm.vocab_)))
        assert math.exp(lm.token_log_prob(w, ctx)) == pytest.approx(oracle(w, ctx), abs=1e-12)


def test_unigram_tends_to_mle_as_discount_vanishes():
    lm = KneserNeyLM(order=1, discount=1e-9).fit([["a", "a", "b"]])
    pa = math.exp(lm.token_log_prob(lm.vocab_.id("a")))
    pb = math.exp(lm.token_log_prob(lm.vocab_.id("b")))
    assert pa / (pa + pb) == pytest.approx(2 / 3, abs=1e-8)
    assert pb / (pa + pb) == pytest.approx(1 / 3, abs=1e-8)


def test_single_sentence_corpus_log_prob_matches_hand_counts():
    # order 1 with a negligible discount: log P = sum of log relative counts over a, a, b, <eos>
    lm = KneserNeyLM(order=1, discount=1e-9).fit([["a", "a", "b"]])
    expected = 2 * math.log(2 / 4) + math.log(1 / 4) + math.log(1 / 4)
    assert lm.sentence_log_prob(["a", "a", "b"]) == pytest.approx(expected, abs=1e-6)


@pytest.fixture(scope="module")
def toy_lm():
    corpus = generate_toy_corpus(600, seed=1)
    return KneserNeyLM(order=3).fit(corpus), corpus


def test_next_token_dist_normalized_for_100_random_contexts(toy_lm):
    lm, _ = toy_lm
    rng = np.random.default_rng(0)
    for _ in range(100):
        hist = [int(i) for i in rng.integers(0, len(lm.vocab_), size=rng.integers(0, 4))]
        dist = lm.next_token_dist(hist)
        assert dist.sum() == pytest.approx(1.0, abs=1e-9)
        assert (dist > 0).all()


def test_sentence_log_prob_properties(toy_lm):
    lm, corpus = toy_lm
    s = corpus[3]
    assert lm.sentence_log_prob(s) < 0
    assert lm.sentence_log_prob(s + s) <= lm.sentence_log_prob(s)
    assert lm.sentence_log_prob(s) == sentence_log_prob(lm, s)
    # empty sentence scores <eos> after the <bos> context
    assert lm.sentence_log_prob([]) == pytest.approx(lm.token_log_prob(lm.vocab_.eos_id, ()))


def test_unknown_words_get_finite_score(toy_lm):
    lm, _ = toy_lm
    assert np.isfinite(lm.sentence_log_prob(["never", "seen", "tokens"]))


def test_uniform_model_perplexity_is_vocab_size():
    vocab = build_vocab([["a", "b", "c"]])
    lm = KneserNeyLM.uniform(vocab)
    assert perplexity(lm, [["a", "b"], ["c"]]) == pytest.approx(len(vocab), rel=1e-12)


def test_perplexity_generalization_gap_median_over_splits():
    corpus = generate_toy_corpus(1000, seed=8)
    gaps = []
    for seed in range(5):
        idx = np.random.default_rng(seed).permutation(len(corpus))
        train = [corpus[i] for i in idx[:800]]
        held = [corpus[i] for i in idx[800:]]
        lm = train_ngram(train, order=3)
        gaps.append(lm.perplexity(held) - lm.perplexity(train))
        assert lm.perplexity(held) < len(lm.vocab_)
    assert np.median(gaps) >= 0


def test_errors():
    with pytest.raises(ValueError):
        KneserNeyLM(order=0).fit(TINY)
    with pytest.raises(ValueError):
        KneserNeyLM(discount=1.0).fit(TINY)
    with pytest.raises(ValueError):
        KneserNeyLM().fit([])


def test_model_file_roundtrip_and_determinism(tmp_path, toy_lm):
    lm, corpus = toy_lm
    lm.save(tmp_path / "a.lm")
    again = KneserNeyLM.load(tmp_path / "a.lm")
    assert again.to_bytes() == lm.to_bytes()
    assert KneserNeyLM(order=3).fit(corpus).to_bytes() == lm.to_bytes()
    for s in corpus[:20]:
        assert again.sentence_log_prob(s) == lm.sentence_log_prob(s)
    with pytest.raises(ValueError):
        KneserNeyLM.from_bytes(b"XXXX" + lm.to_bytes()[4:])


def test_state_scoring_agrees_with_history_scoring(toy_lm):
    lm, corpus = toy_lm
    ids = lm.vocab_.encode(corpus[5])
    state, total = lm.initial_state(), 0.0
    for i, w in enumerate(ids):
        state, lp = lm.state_log_prob(state, w)
        assert lp == lm.token_log_prob(w, ids[:i])
        total += lp


@settings(max_examples=25, deadline=None)
@given(st.lists(st.lists(st.sampled_from("abcde"), min_size=1, max_size=6), min_size=1, max_size=6),
       st.integers(1, 4), st.floats(0.05, 0.95))
def test_property_normalized_and_positive(corpus, order, discount):
    lm = KneserNeyLM(order=order, discount=discount).fit(corpus)
    for hist in ([], [lm.vocab_.id(corpus[0][0])], [lm.vocab_.unk_id, lm.vocab_.bos_id]):
        dist = lm.next_token_dist(hist)
        assert dist.sum() == pytest.approx(1.0, abs=1e-9)
        assert dist.min() > 0
