"""LM-driven unsupervised machine translation at desk scale.

Monolingual corpora in two languages go in; two translation models come
out. The pipeline trains n-gram LMs and word embeddings per language, maps
the embeddings into one space, infers a phrase table, initializes synthetic
parallel data with a noisy-channel SMT decoder and then alternates
back-translation with LM-weighted training of two small seq2seq models.
"""

from .config import RunConfig
from .corpus import (CipherPair, CipherSpec, Vocabulary, build_vocab, generate_cipher_pair, generate_toy_corpus,
                     tokenize)
from .em import TabularInstance, elbo, exact_em_step, marginal_diagnostic, objective
from .embed import (CrossLingualMap, EmbeddingSpace, PPMIEmbedding, SelfLearningAligner, procrustes_map,
                    self_learning, word_translation_prob)
from .evaluation import BleuReport, bleu, emit_curves, lexicon_precision_at_k
from .lm import KneserNeyLM
from .phrase import EmbeddingPhraseTable, PhraseTable
from .seq2seq import Seq2Seq
from .smt import DecoderConfig, NoisyChannelDecoder
from .trainer import LMDrivenTranslator, run_unsupervised
from .weighting import WeightedPair, normalize_weights, weigh_batch

__version__ = "0.1.0"

__all__ = [
    "BleuReport", "CipherPair", "CipherSpec", "CrossLingualMap", "DecoderConfig", "EmbeddingPhraseTable",
    "EmbeddingSpace", "KneserNeyLM", "LMDrivenTranslator", "NoisyChannelDecoder", "PPMIEmbedding", "PhraseTable",
    "RunConfig", "SelfLearningAligner", "Seq2Seq", "TabularInstance", "Vocabulary", "WeightedPair", "bleu",
    "build_vocab", "elbo", "emit_curves", "exact_em_step", "generate_cipher_pair", "generate_toy_corpus",
    "lexicon_precision_at_k", "marginal_diagnostic", "normalize_weights", "objective", "procrustes_map",
    "run_unsupervised", "self_learning", "tokenize", "weigh_batch", "word_translation_prob",
]
