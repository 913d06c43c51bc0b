"""End-to-end LM-driven unsupervised training loop.

Preparation trains both n-gram LMs and embedding spaces, maps the spaces,
and infers phrase tables in both directions. Epoch 0 back-translates with
the noisy-channel SMT decoder; later epochs back-translate with the frozen
opposite-direction NMT model and weight the synthetic pairs.
"""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .config import RunConfig
from .corpus import build_vocab
from .embed import PPMIEmbedding, SelfLearningAligner, bootstrap_seed, seed_dictionary
from .evaluation import bleu, emit_curves
from .lm import KneserNeyLM
from .phrase import EmbeddingPhraseTable, PhraseTable
from .seq2seq import Seq2Seq
from .smt import DecoderConfig, generate_initial_synthetic
from .weighting import WeightedPair, weigh_batch

log = logging.getLogger(__name__)

XY, YX = "x-y", "y-x"


class PipelineError(RuntimeError):
    pass


@dataclass
class DirectionRecord:
    dev_bleu: float
    mean_weight: float
    train_loss: float


@dataclass
class EpochRecord:
    epoch: int
    directions: dict[str, DirectionRecord]
    source: str  # "smt" for epoch 0, "nmt" afterwards
    seconds: float = 0.0


@dataclass
class Resources:
    """Everything built once before the loop: LMs, embeddings, map, phrase tables."""

    lm_x: KneserNeyLM
    lm_y: KneserNeyLM
    table_xy: PhraseTable  # x-phrase -> y-candidates, phi(y | x)
    table_yx: PhraseTable
    seed_size: int = 0
    induced_size: int = 0


@dataclass
class TrainingState:
    epoch: int
    forward: Seq2Seq  # x -> y
    backward: Seq2Seq  # y -> x
    resources: Resources
    history: list[EpochRecord] = field(default_factory=list)
    smt_dev_bleu: dict[str, float] = field(default_factory=dict)
    rng: np.random.Generator | None = None

    def copy(self) -> "TrainingState":
        return TrainingState(self.epoch, self.forward.snapshot(), self.backward.snapshot(), self.resources,
                             copy.deepcopy(self.history), dict(self.smt_dev_bleu), copy.deepcopy(self.rng))


def converged(history, patience: int, max_epochs: int | None = None) -> bool:
    """True when the summed dev BLEU has not improved for ``patience`` epochs, or the epoch cap is hit."""
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if max_epochs is not None and len(history) > max_epochs:
        return True
    if len(history) <= patience:
        return False
    totals = [sum(d.dev_bleu for d in rec.directions.values()) if isinstance(rec, EpochRecord) else float(rec)
              for rec in history]
    return max(totals[-patience:]) <= max(totals[:-patience])


def _chunks(pairs: list[WeightedPair], size: int) -> list[list[WeightedPair]]:
    order = sorted(range(len(pairs)), key=lambda i: (len(pairs[i].x) + len(pairs[i].y), i))
    return [[pairs[i] for i in order[k:k + size]] for k in range(0, len(order), size)]


class LMDrivenTranslator(BaseEstimator):
    """Unsupervised translation between two monolingual corpora.

    ``fit(mono_x, mono_y, dev_x, dev_y)`` runs the whole loop; the finished
    :class:`TrainingState` is left in ``state_``. ``predict`` translates
    x-side sentences with the forward model.
    """

    def __init__(self, config: RunConfig | None = None):
        self.config = config

    @property
    def cfg(self) -> RunConfig:
        return self.config or RunConfig()

    # ------------------------------------------------------------------
    def prepare(self, mono_x, mono_y) -> Resources:
        c = self.cfg
        t0 = time.perf_counter()
        vocab_x = build_vocab(mono_x, max_size=10 ** 9)
        vocab_y = build_vocab(mono_y, max_size=10 ** 9)
        lm_x = KneserNeyLM(c.lm.order, c.lm.discount).fit(mono_x, vocab_x)
        lm_y = KneserNeyLM(c.lm.order, c.lm.discount).fit(mono_y, vocab_y)
        E_x = PPMIEmbedding(c.embed.dim, c.embed.window).fit(mono_x).space_
        E_y = PPMIEmbedding(c.embed.dim, c.embed.window).fit(mono_y).space_
        seed = seed_dictionary(E_x, E_y, c.embed.min_anchors, c.embed.seed_top)
        if c.embed.bootstrap and not all(a == b for a, b in seed):
            # frequency-rank fallback: only its head is trustworthy
            seed = bootstrap_seed(E_x, E_y, seed, c.embed.anchors)
        mapping = SelfLearningAligner(rounds=c.embed.rounds).fit(E_x, E_y, seed).map_
        inverse = copy.copy(mapping)
        inverse.M = mapping.M.T
        pt = dict(max_phrase_len=c.phrase.max_len, top_k=c.phrase.top_k, lam=c.embed.lam,
                  min_count=c.phrase.min_count)
        table_xy = EmbeddingPhraseTable(**pt).fit(mapping, E_x, E_y, mono_x, mono_y).table_
        table_yx = EmbeddingPhraseTable(**pt).fit(inverse, E_y, E_x, mono_y, mono_x).table_
        log.info("prepared LMs, embeddings, map (%d seed / %d induced pairs), tables in %.1fs",
                 len(seed), len(mapping.induced_dict), time.perf_counter() - t0)
        self.embeddings_ = (E_x, E_y)
        self.mapping_ = mapping
        return Resources(lm_x, lm_y, table_xy, table_yx, len(seed), len(mapping.induced_dict))

    def _decoder_config(self) -> DecoderConfig:
        s = self.cfg.smt
        return DecoderConfig(beam_size=s.beam, distortion_limit=s.distortion_limit,
                             distortion_weight=s.distortion_weight, unk_penalty=s.unk_penalty,
                             lm_weight=s.lm_weight, tm_weight=s.tm_weight, max_candidates=s.max_candidates)

    def init_state(self, resources: Resources) -> TrainingState:
        c = self.cfg
        vx, vy = resources.lm_x.vocab_, resources.lm_y.vocab_
        kw = dict(d_model=c.nmt.d_m, lr=c.nmt.lr, clip_norm=c.nmt.clip, batch_size=c.nmt.batch)
        forward = Seq2Seq(seed=2 * c.seed + 11, **kw).initialize(vx, vy)
        backward = Seq2Seq(seed=2 * c.seed + 12, **kw).initialize(vy, vx)
        return TrainingState(0, forward, backward, resources, rng=np.random.default_rng(c.seed))

    # ------------------------------------------------------------------
    def _train_direction(self, model: Seq2Seq, batches, rng, epoch: int = 0) -> float:
        c = self.cfg.nmt
        passes = c.bt_passes if epoch > 0 and c.bt_passes > 0 else c.passes
        model.lr = c.lr * c.lr_decay ** epoch
        losses = []
        for _ in range(passes):
            for bi in rng.permutation(len(batches)):
                batch = batches[bi]
                losses.append(model.train_batch([p.x for p in batch], [p.y for p in batch],
                                                [p.w_star for p in batch], batch_id=int(bi)))
        return float(np.mean(losses))

    def _weigh(self, pairs, lm_src, lm_tgt, frozen):
        batches = _chunks(pairs, self.cfg.nmt.batch)
        return [weigh_batch(b, lm_src, lm_tgt, frozen, self.cfg.train.mode) for b in batches]

    def run_epoch(self, state: TrainingState, mono_x, mono_y, dev_x, dev_y) -> EpochRecord:
        c = self.cfg
        res = state.resources
        t0 = time.perf_counter()
        rng = state.rng
        n = c.train.sub_dataset_size
        d_y = [mono_y[i] for i in sorted(rng.choice(len(mono_y), size=min(n, len(mono_y)), replace=False))]
        d_x = [mono_x[i] for i in sorted(rng.choice(len(mono_x), size=min(n, len(mono_x)), replace=False))]
        # every pair is (model input, model target): (pseudo x, real y) for x->y, (pseudo y, real x) for y->x
        phase = "generate"
        try:
            if state.epoch == 0:
                dcfg = self._decoder_config()
                f_x = generate_initial_synthetic(d_y, res.table_xy, res.lm_x, dcfg)
                f_y = generate_initial_synthetic(d_x, res.table_yx, res.lm_y, dcfg)
                batches_xy = _chunks(f_x, c.nmt.batch)
                batches_yx = _chunks(f_y, c.nmt.batch)
                source = "smt"
            else:
                fwd, bwd = state.forward.snapshot(), state.backward.snapshot()
                f_x = [WeightedPair(h, list(y)) for h, y in zip(bwd.predict(d_y, c.train.beam_train), d_y)]
                f_y = [WeightedPair(h, list(x)) for h, x in zip(fwd.predict(d_x, c.train.beam_train), d_x)]
                phase = "weight"
                batches_xy = self._weigh(f_x, res.lm_x, res.lm_y, fwd)
                batches_yx = self._weigh(f_y, res.lm_y, res.lm_x, bwd)
                source = "nmt"
            phase = "train"
            loss_xy = self._train_direction(state.forward, batches_xy, rng, state.epoch)
            loss_yx = self._train_direction(state.backward, batches_yx, rng, state.epoch)
            phase = "evaluate"
            bleu_xy, bleu_yx = self.dev_bleu(state, dev_x, dev_y)
        except Exception as exc:
            raise PipelineError(f"epoch {state.epoch}, phase {phase}: {exc}") from exc

        def mean_w(batches):
            return float(np.mean([p.w_star for b in batches for p in b]))

        rec = EpochRecord(state.epoch, {
            XY: DirectionRecord(bleu_xy, mean_w(batches_xy), loss_xy),
            YX: DirectionRecord(bleu_yx, mean_w(batches_yx), loss_yx),
        }, source, time.perf_counter() - t0)
        state.history.append(rec)
        state.epoch += 1
        log.info("epoch %d (%s): bleu x-y %.2f y-x %.2f, loss %.3f / %.3f, %.1fs", rec.epoch, source,
                 bleu_xy, bleu_yx, loss_xy, loss_yx, rec.seconds)
        return rec

    def dev_bleu(self, state: TrainingState, dev_x, dev_y) -> tuple[float, float]:
        n = self.cfg.train.dev_size
        beam = self.cfg.train.beam_eval
        dev_x, dev_y = dev_x[:n], dev_y[:n]
        hyp_y = state.forward.predict(dev_x, beam)
        hyp_x = state.backward.predict(dev_y, beam)
        return bleu(hyp_y, dev_y).score, bleu(hyp_x, dev_x).score

    def smt_dev_bleu(self, state: TrainingState, dev_x, dev_y) -> dict[str, float]:
        """BLEU of the epoch-0 noisy-channel decoder itself on the dev set."""
        n = self.cfg.train.dev_size
        res = state.resources
        dcfg = self._decoder_config()
        dev_x, dev_y = dev_x[:n], dev_y[:n]
        hyp_x = [p.x for p in generate_initial_synthetic(dev_y, res.table_xy, res.lm_x, dcfg)]
        hyp_y = [p.x for p in generate_initial_synthetic(dev_x, res.table_yx, res.lm_y, dcfg)]
        state.smt_dev_bleu = {XY: bleu(hyp_y, dev_y).score, YX: bleu(hyp_x, dev_x).score}
        return state.smt_dev_bleu

    def train_loop(self, state: TrainingState, mono_x, mono_y, dev_x, dev_y) -> TrainingState:
        c = self.cfg
        while not converged(state.history, c.train.patience, c.train.max_epochs):
            self.run_epoch(state, mono_x, mono_y, dev_x, dev_y)
            if c.paths.output_dir:
                save_checkpoint(state, Path(c.paths.output_dir), c)
        return state

    def fit(self, mono_x, mono_y, dev_x=None, dev_y=None):
        self.cfg.validate()
        if not mono_x or not mono_y:
            raise ValueError("both monolingual corpora must be non-empty")
        if dev_x is None or dev_y is None:
            raise ValueError("a small aligned dev set is needed to track BLEU")
        resources = self.prepare(mono_x, mono_y)
        state = self.init_state(resources)
        self.smt_dev_bleu(state, dev_x, dev_y)
        self.state_ = self.train_loop(state, mono_x, mono_y, dev_x, dev_y)
        return self

    def predict(self, sentences, beam_size: int | None = None):
        return self.state_.forward.predict(sentences, beam_size or self.cfg.train.beam_eval)


def run_unsupervised(config: RunConfig, mono_x, mono_y, dev_x, dev_y) -> TrainingState:
    return LMDrivenTranslator(config).fit(mono_x, mono_y, dev_x, dev_y).state_


def save_checkpoint(state: TrainingState, out: Path, config: RunConfig | None = None) -> Path:
    """``out/epoch_<k>/`` with both model checkpoints and a JSON state record."""
    d = out / f"epoch_{state.epoch - 1}"
    d.mkdir(parents=True, exist_ok=True)
    state.forward.save(d / "forward.ckpt")
    state.backward.save(d / "backward.ckpt")
    record = {
        "epoch": state.epoch,
        "smt_dev_bleu": state.smt_dev_bleu,
        "history": [asdict(r) for r in state.history],
    }
    (d / "state.json").write_text(json.dumps(record, indent=1, sort_keys=True), encoding="utf-8")
    (out / "history.csv").write_text(emit_curves(state.history), encoding="utf-8")
    if config is not None:
        config.save(out / "effective.cfg")
    return d
