"""Minimal attention encoder-decoder with hand-written backpropagation.

Single-layer GRU encoder, GRU decoder with input feeding, dot-product
attention over the encoder states, a tanh combination layer and a softmax
output over the target vocabulary. Everything runs in float64 numpy.
"""

from __future__ import annotations

import io
import struct
from typing import Sequence

import numpy as np
from scipy.special import expit, log_softmax
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import Vocabulary

_MAGIC = b"S2SM"
_VERSION = 1
_MASKED = -1e30

PARAM_NAMES = ("src_emb", "tgt_emb", "enc_W", "enc_U", "enc_b", "init_W", "init_b",
               "dec_W", "dec_U", "dec_b", "comb_W", "comb_b", "out_W", "out_b")


class TrainingError(RuntimeError):
    pass


def _shapes(vx: int, vy: int, d: int) -> dict[str, tuple[int, ...]]:
    return {
        "src_emb": (vx, d), "tgt_emb": (vy, d),
        "enc_W": (d, 3 * d), "enc_U": (d, 3 * d), "enc_b": (3 * d,),
        "init_W": (d, d), "init_b": (d,),
        "dec_W": (2 * d, 3 * d), "dec_U": (d, 3 * d), "dec_b": (3 * d,),
        "comb_W": (2 * d, d), "comb_b": (d,),
        "out_W": (d, vy), "out_b": (vy,),
    }


# --------------------------------------------------------------------------
# GRU cell: columns of W/U/b are ordered [update z | reset r | candidate n]

def _gru(x, h, W, U, b):
    d = h.shape[1]
    gx = x @ W + b
    gh = h @ U
    z = expit(gx[:, :d] + gh[:, :d])
    r = expit(gx[:, d:2 * d] + gh[:, d:2 * d])
    n = np.tanh(gx[:, 2 * d:] + r * gh[:, 2 * d:])
    h_new = (1.0 - z) * n + z * h
    return h_new, (x, h, z, r, n, gh[:, 2 * d:])


def _gru_back(dh_new, cache, W, U, gW, gU, gb):
    x, h, z, r, n, ghn = cache
    dn = dh_new * (1.0 - z)
    dz = dh_new * (h - n)
    dh = dh_new * z
    dn_pre = dn * (1.0 - n * n)
    dr = dn_pre * ghn
    dz_pre = dz * z * (1.0 - z)
    dr_pre = dr * r * (1.0 - r)
    dgx = np.concatenate([dz_pre, dr_pre, dn_pre], axis=1)
    dgh = np.concatenate([dz_pre, dr_pre, dn_pre * r], axis=1)
    gW += x.T @ dgx
    gb += dgx.sum(axis=0)
    gU += h.T @ dgh
    return dgx @ W.T, dh + dgh @ U.T


def _pad(seqs: Sequence[Sequence[int]], pad: int, min_len: int = 1):
    t = max(min_len, max((len(s) for s in seqs), default=0))
    out = np.full((len(seqs), t), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), t))
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return out, mask


class Seq2Seq(BaseEstimator):
    """Attention GRU translation model trained by weighted-likelihood SGD.

    Parameters
    ----------
    d_model : int
        Embedding and hidden size.
    lr : float
        Plain SGD learning rate.
    clip_norm : float
        Global gradient-norm clip.
    batch_size : int
        Mini-batch size used by :meth:`fit`.
    init_scale : float
        Parameters start uniform in ``[-init_scale, init_scale]``.
    seed : int
    """

    def __init__(self, d_model: int = 64, lr: float = 0.05, clip_norm: float = 5.0, batch_size: int = 32,
                 init_scale: float = 0.08, seed: int = 0):
        self.d_model = d_model
        self.lr = lr
        self.clip_norm = clip_norm
        self.batch_size = batch_size
        self.init_scale = init_scale
        self.seed = seed

    # ------------------------------------------------------------------
    def initialize(self, vocab_x: Vocabulary, vocab_y: Vocabulary):
        if self.d_model < 2:
            raise ValueError("d_model must be >= 2")
        rng = np.random.default_rng(self.seed)
        self.vocab_x_ = vocab_x
        self.vocab_y_ = vocab_y
        self.params_ = {name: rng.uniform(-self.init_scale, self.init_scale, size=shape)
                        for name, shape in _shapes(len(vocab_x), len(vocab_y), self.d_model).items()}
        self.n_updates_ = 0
        self._rng = np.random.default_rng(self.seed + 1)
        return self

    def _ids_x(self, sent) -> tuple[int, ...]:
        if len(sent) and isinstance(sent[0], str):
            return self.vocab_x_.encode(sent)
        return tuple(int(i) for i in sent)

    def _ids_y(self, sent) -> tuple[int, ...]:
        if len(sent) and isinstance(sent[0], str):
            return self.vocab_y_.encode(sent)
        return tuple(int(i) for i in sent)

    def _batch(self, xs, ys):
        vx, vy = self.vocab_x_, self.vocab_y_
        src = [self._ids_x(x) or (vx.dummy_id,) for x in xs]
        tgt = [self._ids_y(y) for y in ys]
        src_ids, src_mask = _pad(src, vx.pad_id)
        tin, _ = _pad([(vy.bos_id,) + t for t in tgt], vy.pad_id)
        tout, tmask = _pad([t + (vy.eos_id,) for t in tgt], vy.pad_id)
        return src_ids, src_mask, tin, tout, tmask

    # ------------------------------------------------------------------
    def _encode(self, src_ids, src_mask, keep_cache=False):
        p = self.params_
        b, t = src_ids.shape
        d = self.d_model
        h = np.zeros((b, d))
        states = np.zeros((b, t, d))
        caches = []
        for j in range(t):
            x = p["src_emb"][src_ids[:, j]]
            h_new, cache = _gru(x, h, p["enc_W"], p["enc_U"], p["enc_b"])
            m = src_mask[:, j:j + 1]
            h = m * h_new + (1.0 - m) * h
            states[:, j] = h
            if keep_cache:
                caches.append(cache)
        lengths = src_mask.sum(axis=1, keepdims=True)
        mean = (states * src_mask[:, :, None]).sum(axis=1) / lengths
        s0 = np.tanh(mean @ p["init_W"] + p["init_b"])
        return states, s0, (caches, mean, lengths)

    def _out_bias(self) -> np.ndarray:
        # <pad>, <bos> and <dummy> are never emitted, so they get no probability mass
        bias = getattr(self, "_out_bias_", None)
        if bias is None or len(bias) != len(self.vocab_y_):
            vy = self.vocab_y_
            bias = np.zeros(len(vy))
            bias[[vy.pad_id, vy.bos_id, vy.dummy_id]] = _MASKED
            self._out_bias_ = bias
        return bias

    def _decode_step(self, y_prev, s, o, H, att_bias):
        p = self.params_
        inp = np.concatenate([p["tgt_emb"][y_prev], o], axis=1)
        s_new, gcache = _gru(inp, s, p["dec_W"], p["dec_U"], p["dec_b"])
        e = np.einsum("bjd,bd->bj", H, s_new) + att_bias
        e -= e.max(axis=1, keepdims=True)
        a = np.exp(e)
        a /= a.sum(axis=1, keepdims=True)
        c = np.einsum("bj,bjd->bd", a, H)
        sc = np.concatenate([s_new, c], axis=1)
        o_new = np.tanh(sc @ p["comb_W"] + p["comb_b"])
        logits = o_new @ p["out_W"] + p["out_b"] + self._out_bias()
        return s_new, o_new, log_softmax(logits, axis=1), (gcache, a, c, sc)

    def _forward(self, src_ids, src_mask, tin, tout, tmask, keep_cache=False):
        """Per-sentence target log-probabilities, plus caches for backprop."""
        H, s, enc_cache = self._encode(src_ids, src_mask, keep_cache)
        att_bias = np.where(src_mask > 0, 0.0, _MASKED)
        b = src_ids.shape[0]
        o = np.zeros((b, self.d_model))
        rows = np.arange(b)
        total = np.zeros(b)
        steps = []
        for t in range(tin.shape[1]):
            s_new, o_new, logp, cache = self._decode_step(tin[:, t], s, o, H, att_bias)
            total += logp[rows, tout[:, t]] * tmask[:, t]
            if keep_cache:
                steps.append((s, o, s_new, o_new, logp, cache))
            s, o = s_new, o_new
        return total, (H, enc_cache, steps) if keep_cache else None

    def _backward(self, coef, src_ids, src_mask, tin, tout, tmask, fcache):
        """Gradients of ``-sum_b coef_b * log P(y_b | x_b)``."""
        p = self.params_
        g = {k: np.zeros_like(v) for k, v in p.items()}
        H, (enc_caches, mean, lengths), steps = fcache
        b, tx, d = H.shape
        rows = np.arange(b)
        dH = np.zeros_like(H)
        ds_next = np.zeros((b, d))
        do_next = np.zeros((b, d))
        for t in range(len(steps) - 1, -1, -1):
            s_prev, o_prev, s, o, logp, (gcache, a, c, sc) = steps[t]
            dlogits = np.exp(logp)
            dlogits[rows, tout[:, t]] -= 1.0
            dlogits *= (coef * tmask[:, t])[:, None]
            g["out_W"] += o.T @ dlogits
            g["out_b"] += dlogits.sum(axis=0)
            do = dlogits @ p["out_W"].T + do_next
            dpre = do * (1.0 - o * o)
            g["comb_W"] += sc.T @ dpre
            g["comb_b"] += dpre.sum(axis=0)
            dsc = dpre @ p["comb_W"].T
            ds = dsc[:, :d] + ds_next
            dc = dsc[:, d:]
            da = np.einsum("bjd,bd->bj", H, dc)
            dH += a[:, :, None] * dc[:, None, :]
            de = a * (da - (a * da).sum(axis=1, keepdims=True))
            ds += np.einsum("bj,bjd->bd", de, H)
            dH += de[:, :, None] * s[:, None, :]
            dinp, ds_next = _gru_back(ds, gcache, p["dec_W"], p["dec_U"], g["dec_W"], g["dec_U"], g["dec_b"])
            np.add.at(g["tgt_emb"], tin[:, t], dinp[:, :d])
            do_next = dinp[:, d:]
        # initial decoder state
        s0 = steps[0][0]
        dpre = ds_next * (1.0 - s0 * s0)
        g["init_W"] += mean.T @ dpre
        g["init_b"] += dpre.sum(axis=0)
        dmean = dpre @ p["init_W"].T
        dH += (src_mask / lengths)[:, :, None] * dmean[:, None, :]
        # encoder
        dh = np.zeros((b, d))
        for j in range(tx - 1, -1, -1):
            dh = dh + dH[:, j]
            m = src_mask[:, j:j + 1]
            dx, dh_prev = _gru_back(m * dh, enc_caches[j], p["enc_W"], p["enc_U"],
                                    g["enc_W"], g["enc_U"], g["enc_b"])
            np.add.at(g["src_emb"], src_ids[:, j], dx)
            dh = (1.0 - m) * dh + dh_prev
        return g

    # ------------------------------------------------------------------
    def loss_and_grads(self, xs, ys, weights=None, normalize: bool = True):
        """Weighted NLL ``-sum w log P(y|x)`` (divided by ``sum w`` when ``normalize``) and its gradients."""
        check_is_fitted(self, "params_")
        w = np.ones(len(xs)) if weights is None else np.asarray(weights, dtype=float)
        if len(xs) == 0 or len(xs) != len(ys) or len(w) != len(xs):
            raise ValueError("batch must be non-empty with one weight per pair")
        if np.any(w <= 0):
            raise ValueError("batch weights must be positive")
        batch = self._batch(xs, ys)
        logp, cache = self._forward(*batch, keep_cache=True)
        coef = w / w.sum() if normalize else w
        loss = -float(coef @ logp)
        return loss, self._backward(coef, *batch, cache)

    def train_batch(self, xs, ys, weights=None, batch_id=None) -> float:
        """One clipped SGD step on the normalized weighted NLL; returns the pre-step loss."""
        loss, grads = self.loss_and_grads(xs, ys, weights)
        norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if not np.isfinite(loss) or not np.isfinite(norm):
            raise TrainingError(f"non-finite loss/gradient in batch {batch_id if batch_id is not None else self.n_updates_}")
        scale = self.lr * min(1.0, self.clip_norm / norm) if norm > 0 else self.lr
        for k, gk in grads.items():
            self.params_[k] -= scale * gk
        self.n_updates_ += 1
        return loss

    partial_fit = train_batch

    def fit(self, xs, ys, sample_weight=None, n_passes: int = 1, shuffle: bool = True):
        """Mini-batch SGD over the pairs; returns self with ``loss_history_`` set."""
        check_is_fitted(self, "params_")
        w = np.ones(len(xs)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        losses = []
        # batches of similar length waste less padding
        order = np.argsort([len(x) + len(y) for x, y in zip(xs, ys)], kind="stable")
        chunks = [order[i: i + self.batch_size] for i in range(0, len(order), self.batch_size)]
        for _ in range(n_passes):
            seq = self._rng.permutation(len(chunks)) if shuffle else range(len(chunks))
            for ci in seq:
                idx = chunks[ci]
                losses.append(self.train_batch([xs[i] for i in idx], [ys[i] for i in idx], w[idx]))
        self.loss_history_ = losses
        return self

    # ------------------------------------------------------------------
    def log_prob_batch(self, xs, ys, chunk: int = 64) -> np.ndarray:
        check_is_fitted(self, "params_")
        out = []
        for i in range(0, len(xs), chunk):
            logp, _ = self._forward(*self._batch(xs[i:i + chunk], ys[i:i + chunk]))
            out.append(logp)
        return np.concatenate(out) if out else np.zeros(0)

    def log_prob(self, x, y) -> float:
        """sum_t log P(y_t | y_<t, x), including the final ``<eos>``."""
        return float(self.log_prob_batch([x], [y])[0])

    score_samples = log_prob_batch

    def decoder_lm_log_prob_batch(self, ys) -> np.ndarray:
        return self.log_prob_batch([(self.vocab_x_.dummy_id,)] * len(ys), ys)

    def decoder_lm_log_prob(self, y) -> float:
        """log P(y) from the decoder conditioned on the single ``<dummy>`` source token."""
        return self.log_prob((self.vocab_x_.dummy_id,), y)

    def step_distributions(self, x, y) -> np.ndarray:
        """Teacher-forced next-token distributions, one row per target step."""
        batch = self._batch([x], [y])
        src_ids, src_mask, tin, _, _ = batch
        H, s, _ = self._encode(src_ids, src_mask)
        att_bias = np.where(src_mask > 0, 0.0, _MASKED)
        o = np.zeros((1, self.d_model))
        rows = []
        for t in range(tin.shape[1]):
            s, o, logp, _ = self._decode_step(tin[:, t], s, o, H, att_bias)
            rows.append(np.exp(logp[0]))
        return np.array(rows)

    def beam_decode(self, x, beam_size: int = 4, max_len: int | None = None) -> tuple[list[str], float]:
        """Beam search; returns the finished hypothesis with the highest total log-prob."""
        return self.beam_decode_batch([x], beam_size, max_len)[0]

    def beam_decode_batch(self, xs, beam_size: int = 4, max_len: int | None = None,
                          chunk: int = 64) -> list[tuple[list[str], float]]:
        """Independent beam searches for many sources, with the live hypotheses of all
        sentences stacked into one decoder batch per step."""
        check_is_fitted(self, "params_")
        if beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        out = []
        for i in range(0, len(xs), chunk):
            out.extend(self._beam_chunk(xs[i:i + chunk], beam_size, max_len))
        return out

    def _beam_chunk(self, xs, beam_size, max_len):
        vy = self.vocab_y_
        srcs = [self._ids_x(x) or (self.vocab_x_.dummy_id,) for x in xs]
        limits = [2 * len(src) + 5 if max_len is None else max_len for src in srcs]
        src_ids, src_mask = _pad(srcs, self.vocab_x_.pad_id)
        H_all, s0, _ = self._encode(src_ids, src_mask)
        bias_all = np.where(src_mask > 0, 0.0, _MASKED)
        banned = np.zeros(len(vy))
        banned[[vy.pad_id, vy.bos_id, vy.dummy_id]] = -np.inf

        n = len(srcs)
        n_vocab = len(vy)
        limits = np.array(limits)
        # live hypotheses, flattened across sentences (grouped by sentence): owner, slot, prefix, score
        owner = np.arange(n)
        slot = np.zeros(n, dtype=np.int64)
        prefixes: list[tuple[int, ...]] = [()] * n
        scores = np.zeros(n)
        s, o = s0, np.zeros((n, self.d_model))
        prev = np.full(n, vy.bos_id)
        finished: list[list[tuple[float, tuple[int, ...]]]] = [[] for _ in range(n)]
        t = 0
        while len(owner):
            s, o, logp, _ = self._decode_step(prev, s, o, H_all[owner], bias_all[owner])
            cand = scores[:, None] + logp + banned
            last = limits[owner] == t + 1
            if last.any():
                # force termination
                eos = cand[last, vy.eos_id]
                cand[last] = -np.inf
                cand[last, vy.eos_id] = eos
            sents = np.unique(owner)
            pos = np.searchsorted(sents, owner)
            width = int(slot.max()) + 1
            grid = np.full((len(sents), width, n_vocab), -np.inf)
            grid[pos, slot] = cand
            grid = grid.reshape(len(sents), -1)
            k = min(beam_size, grid.shape[1])
            kth = np.partition(grid, grid.shape[1] - k, axis=1)[:, grid.shape[1] - k]
            first = np.searchsorted(owner, sents)
            next_owner, next_slot, next_prefix, next_score, next_rows, next_tok = [], [], [], [], [], []
            for g, sent in enumerate(sents):
                flat = np.flatnonzero(grid[g] >= kth[g]) if np.isfinite(kth[g]) else \
                    np.flatnonzero(np.isfinite(grid[g]))
                vals = grid[g, flat]
                # best first; ties go to the lower (beam, token) index, i.e. lower token id within a beam
                order = flat[np.lexsort((flat, -vals))][:beam_size]
                keep = []
                for f in order:
                    bi, tok = divmod(int(f), n_vocab)
                    r = int(first[g]) + bi
                    if tok == vy.eos_id:
                        finished[sent].append((float(grid[g, f]), prefixes[r]))
                    else:
                        keep.append((r, tok, grid[g, f]))
                best_done = max((f[0] for f in finished[sent]), default=-np.inf)
                if keep and len(finished[sent]) < beam_size and best_done < max(kp[2] for kp in keep):
                    for j, (r, tok, sc) in enumerate(keep):
                        next_owner.append(sent)
                        next_slot.append(j)
                        next_prefix.append(prefixes[r] + (tok,))
                        next_score.append(sc)
                        next_rows.append(r)
                        next_tok.append(tok)
            owner = np.array(next_owner, dtype=np.int64)
            slot = np.array(next_slot, dtype=np.int64)
            prefixes, scores = next_prefix, np.array(next_score)
            s, o = s[next_rows], o[next_rows]
            prev = np.array(next_tok, dtype=np.int64)
            t += 1
        results = []
        for fin in finished:
            score, ids = max(fin, key=lambda f: (f[0], [-i for i in f[1]]))
            results.append((vy.decode(ids), score))
        return results

    def predict(self, xs, beam_size: int = 4, max_len: int | None = None) -> list[list[str]]:
        return [toks for toks, _ in self.beam_decode_batch(xs, beam_size, max_len)]

    # ------------------------------------------------------------------
    def to_bytes(self) -> bytes:
        check_is_fitted(self, "params_")
        buf = io.BytesIO()
        buf.write(_MAGIC)
        buf.write(struct.pack("<IIdddqI", _VERSION, self.d_model, self.lr, self.clip_norm, self.init_scale,
                              self.seed, self.batch_size))
        for vocab in (self.vocab_x_, self.vocab_y_):
            buf.write(struct.pack("<I", len(vocab)))
            for tok in vocab.tokens:
                raw = tok.encode("utf-8")
                buf.write(struct.pack("<I", len(raw)) + raw)
        buf.write(struct.pack("<I", len(PARAM_NAMES)))
        for name in PARAM_NAMES:
            arr = self.params_[name]
            raw = name.encode("ascii")
            buf.write(struct.pack("<I", len(raw)) + raw)
            buf.write(struct.pack("<I", arr.ndim) + struct.pack("<" + "Q" * arr.ndim, *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Seq2Seq":
        buf = io.BytesIO(data)
        if buf.read(4) != _MAGIC:
            raise ValueError("not a seq2seq checkpoint (bad magic)")
        fmt = "<IIdddqI"
        version, d, lr, clip, scale, seed, bs = struct.unpack(fmt, buf.read(struct.calcsize(fmt)))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        vocabs = []
        for _ in range(2):
            (n,) = struct.unpack("<I", buf.read(4))
            toks = []
            for _ in range(n):
                (m,) = struct.unpack("<I", buf.read(4))
                toks.append(buf.read(m).decode("utf-8"))
            vocabs.append(Vocabulary(toks[5:]))
        model = cls(d_model=d, lr=lr, clip_norm=clip, batch_size=bs, init_scale=scale, seed=seed)
        model.vocab_x_, model.vocab_y_ = vocabs
        (n_blocks,) = struct.unpack("<I", buf.read(4))
        params = {}
        for _ in range(n_blocks):
            (m,) = struct.unpack("<I", buf.read(4))
            name = buf.read(m).decode("ascii")
            (ndim,) = struct.unpack("<I", buf.read(4))
            shape = struct.unpack("<" + "Q" * ndim, buf.read(8 * ndim))
            size = int(np.prod(shape)) * 8
            params[name] = np.frombuffer(buf.read(size), dtype="<f8").reshape(shape).astype(np.float64)
        model.params_ = params
        model.n_updates_ = 0
        model._rng = np.random.default_rng(seed + 1)
        return model

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Seq2Seq":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def snapshot(self) -> "Seq2Seq":
        """Frozen copy for back-translation workers."""
        return Seq2Seq.from_bytes(self.to_bytes())


def init_model(vocab_x: Vocabulary, vocab_y: Vocabulary, d_m: int = 64, seed: int = 0, **kw) -> Seq2Seq:
    return Seq2Seq(d_model=d_m, seed=seed, **kw).initialize(vocab_x, vocab_y)
