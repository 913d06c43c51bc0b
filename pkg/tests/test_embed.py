import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from lmumt.corpus import CipherSpec, generate_cipher_pair, generate_toy_corpus
from lmumt.evaluation import lexicon_precision_at_k
from lmumt.embed import (CrossLingualMap, EmbeddingSpace, PPMIEmbedding, SelfLearningAligner, bootstrap_seed,
                         mutual_nearest_neighbors, procrustes_map, seed_dictionary, self_learning,
                         train_embeddings, translation_log_probs, word_translation_prob)


def random_space(rng, n=120, d=12, prefix="w"):
    m = rng.normal(size=(n, d))
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    return EmbeddingSpace([f"{prefix}{i}" for i in range(n)], m)


def rotated(space, Q, prefix="v"):
    return EmbeddingSpace([prefix + w[1:] for w in space.words], space.matrix @ Q)


# -- embeddings ----------------------------------------------------------------

def test_interchangeable_tokens_get_near_identical_vectors():
    rng = np.random.default_rng(0)
    fillers = [f"f{i}" for i in range(30)]
    corpus = []
    for _ in range(400):
        left, right = rng.choice(fillers, size=2), rng.choice(fillers, size=2)
        for w in ("a", "b"):
            corpus.append(list(left) + [w] + list(right))
    space = train_embeddings(corpus, dim=10, window=2)
    assert space.vector("a") @ space.vector("b") >= 0.99


def test_one_dimensional_cosines_are_plus_minus_one():
    space = train_embeddings(generate_toy_corpus(200, seed=0), dim=1, window=2)
    cos = space.matrix @ space.matrix.T
    np.testing.assert_allclose(np.abs(cos), 1.0, atol=1e-12)


def test_embeddings_are_deterministic_and_unit_norm():
    corpus = generate_toy_corpus(300, seed=2)
    a = train_embeddings(corpus, dim=16, window=3)
    b = train_embeddings(corpus, dim=16, window=3)
    assert a.words == b.words
    assert np.array_equal(a.matrix, b.matrix)
    np.testing.assert_allclose(np.linalg.norm(a.matrix, axis=1), 1.0, atol=1e-12)


def test_embedding_errors():
    with pytest.raises(ValueError):
        train_embeddings([["a", "a", "a"]], dim=1)
    with pytest.raises(ValueError):
        train_embeddings([["a", "b", "c"]], dim=5)
    with pytest.raises(ValueError):
        PPMIEmbedding(window=0).fit([["a", "b"]])


def test_embedding_file_roundtrip(tmp_path):
    space = train_embeddings(generate_toy_corpus(100, seed=1), dim=8, window=2)
    space.save(tmp_path / "e.vec")
    again = EmbeddingSpace.load(tmp_path / "e.vec")
    assert again.words == space.words
    assert np.array_equal(again.matrix, space.matrix)


def test_transformer_api():
    est = PPMIEmbedding(dim=4, window=2).fit(generate_toy_corpus(100, seed=1))
    words = est.space_.words[:3]
    assert est.transform(words).shape == (3, 4)
    assert est.get_params()["dim"] == 4


# -- Procrustes ----------------------------------------------------------------

@pytest.mark.parametrize("seed", [0, 1, 2])
def test_rotation_recovery_and_perfect_induction(seed):
    rng = np.random.default_rng(seed)
    E_x = random_space(rng)
    Q = ortho_group.rvs(E_x.dim, random_state=seed)
    E_y = rotated(E_x, Q)
    mapping = procrustes_map(E_x, E_y, list(zip(E_x.words, E_y.words)))
    assert np.linalg.norm(mapping.M - Q) / np.linalg.norm(Q) < 1e-6
    induced = mutual_nearest_neighbors(E_x, E_y, mapping.M)
    assert {(a, b) for a, b, _ in induced} == set(zip(E_x.words, E_y.words))


def test_identity_recovery_and_order_invariance():
    rng = np.random.default_rng(3)
    E = random_space(rng)
    seed = list(zip(E.words, E.words))
    M = procrustes_map(E, E, seed).M
    np.testing.assert_allclose(M, np.eye(E.dim), atol=1e-9)
    E_y = rotated(E, ortho_group.rvs(E.dim, random_state=4))
    pairs = list(zip(E.words[:40], E_y.words[:40]))
    a = procrustes_map(E, E_y, pairs).M
    b = procrustes_map(E, E_y, pairs[::-1]).M
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_map_is_orthogonal_and_preserves_cosines():
    rng = np.random.default_rng(5)
    E_x, E_y = random_space(rng, prefix="a"), random_space(rng, prefix="b")
    M = procrustes_map(E_x, E_y, list(zip(E_x.words[:30], E_y.words[:30]))).M
    np.testing.assert_allclose(M.T @ M, np.eye(M.shape[0]), atol=1e-6)
    u, v = E_x.matrix[0], E_x.matrix[1]
    assert (u @ M) @ (v @ M) == pytest.approx(u @ v, abs=1e-9)


def test_procrustes_errors():
    rng = np.random.default_rng(0)
    E = random_space(rng)
    with pytest.raises(ValueError):
        procrustes_map(E, E, [])
    with pytest.raises(KeyError):
        procrustes_map(E, E, [("nope", "w1")])


def test_map_file_roundtrip(tmp_path):
    M = ortho_group.rvs(5, random_state=0)
    CrossLingualMap(M).save(tmp_path / "m.txt")
    assert np.array_equal(CrossLingualMap.load(tmp_path / "m.txt").M, M)


# -- self-learning ---------------------------------------------------------------

def test_self_learning_on_identical_spaces_is_identity():
    rng = np.random.default_rng(0)
    E = random_space(rng)
    m = self_learning(E, E, list(zip(E.words[:20], E.words[:20])), rounds=3)
    assert all(a == b and c == pytest.approx(1.0) for a, b, c in m.induced_dict)
    assert len(m.induced_dict) == len(E)


def test_one_round_is_procrustes_plus_one_induction():
    rng = np.random.default_rng(1)
    E_x, E_y = random_space(rng, prefix="a"), random_space(rng, prefix="b")
    seed = list(zip(E_x.words[:30], E_y.words[:30]))
    m = self_learning(E_x, E_y, seed, rounds=1)
    M = procrustes_map(E_x, E_y, seed).M
    assert np.array_equal(m.M, M)
    assert m.induced_dict == mutual_nearest_neighbors(E_x, E_y, M)


@pytest.fixture(scope="module")
def cipher_spaces():
    Y = generate_toy_corpus(20000, seed=3)
    pair = generate_cipher_pair(Y, CipherSpec(seed=3, reorder_window=2), dev_size=50, test_size=50)
    E_x = train_embeddings(pair.train_x, dim=64, window=5)
    E_y = train_embeddings(pair.train_y, dim=64, window=5)
    return pair, E_x, E_y


def _precision(induced, gold_x_to_y, E_x):
    gold = {x: y for x, y in gold_x_to_y.items() if x in E_x}
    return lexicon_precision_at_k({a: [b] for a, b, *_ in induced}, gold, 1)


def test_self_learning_does_not_lose_precision(cipher_spaces):
    pair, E_x, E_y = cipher_spaces
    gold = pair.gold_x_to_y
    seed = [(x, gold[x]) for x in E_x.words if gold.get(x) in E_y][:50]
    first = self_learning(E_x, E_y, seed, rounds=1)
    final = self_learning(E_x, E_y, seed, rounds=5)
    assert _precision(final.induced_dict, gold, E_x) >= _precision(first.induced_dict, gold, E_x)
    assert final.history == sorted(final.history)


def test_bootstrap_recovers_lexicon_from_frequency_rank_seed(cipher_spaces):
    pair, E_x, E_y = cipher_spaces
    gold = pair.gold_x_to_y
    seed = seed_dictionary(E_x, E_y)
    assert all(a != b for a, b in seed)  # cipher words never coincide with y words
    boot = bootstrap_seed(E_x, E_y, seed)
    m = SelfLearningAligner(rounds=5).fit(E_x, E_y, boot).map_
    assert _precision(m.induced_dict, gold, E_x) > 0.8
    with pytest.raises(ValueError):
        bootstrap_seed(E_x, E_y, [("nope", "nope")])


def test_seed_dictionary_prefers_identical_strings():
    rng = np.random.default_rng(0)
    E = random_space(rng, n=40)
    assert seed_dictionary(E, E, min_anchors=25) == [(w, w) for w in E.words]
    F = random_space(rng, n=40, prefix="z")
    assert seed_dictionary(E, F, top=10) == list(zip(E.words[:10], F.words[:10]))


def test_empty_induction_raises():
    E = EmbeddingSpace(["a", "b"], np.array([[1.0, 0.0], [1.0, 0.0]]))
    F = EmbeddingSpace(["c", "d"], np.array([[1.0, 0.0], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        SelfLearningAligner(rounds=0).fit(E, F, [("a", "c")])


# -- translation probabilities -----------------------------------------------------

def test_lambda_zero_is_uniform():
    rng = np.random.default_rng(0)
    E_x, E_y = random_space(rng, prefix="a"), random_space(rng, prefix="b")
    p = word_translation_prob(CrossLingualMap(np.eye(E_x.dim)), E_x, E_y, "a3", lam=0.0)
    assert np.all(p == 1.0 / len(E_y))


def test_two_candidate_closed_form():
    q = np.array([1.0, 0.0])
    targets = np.array([[1.0, 0.0], [0.0, 1.0]])
    p = np.exp(translation_log_probs(q, targets, 30.0))
    small = 1.0 / (1.0 + math.exp(30.0))
    assert p[1] == pytest.approx(small, abs=1e-12)
    assert p[1] == pytest.approx(9.36e-14, rel=1e-3)
    assert p[0] == pytest.approx(1.0 - small, abs=1e-12)


def test_normalization_for_100_random_words():
    rng = np.random.default_rng(1)
    E_x, E_y = random_space(rng, n=150, prefix="a"), random_space(rng, prefix="b")
    mapping = CrossLingualMap(ortho_group.rvs(E_x.dim, random_state=1))
    for w in rng.choice(E_x.words, size=100, replace=False):
        assert word_translation_prob(mapping, E_x, E_y, w, 30.0).sum() == pytest.approx(1.0, abs=1e-9)


def test_unknown_source_word_raises():
    rng = np.random.default_rng(0)
    E = random_space(rng)
    with pytest.raises(KeyError):
        word_translation_prob(CrossLingualMap(np.eye(E.dim)), E, E, "missing")
    with pytest.raises(ValueError):
        translation_log_probs(np.ones(2), np.eye(2), -1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.01, 200.0))
def test_argmax_and_ordering_are_lambda_invariant(seed, lam):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=6)
    targets = rng.normal(size=(9, 6))
    cos = (targets / np.linalg.norm(targets, axis=1, keepdims=True)) @ (q / np.linalg.norm(q))
    logp = translation_log_probs(q, targets, lam)
    assert np.argmax(logp) == np.argmax(cos)
    assert np.all(np.diff(logp[np.argsort(cos)]) >= -1e-12)
