"""Command-line entry point: ``lmumt <subcommand> [flags]``.

Every subcommand reads and writes plain files in the formats owned by the
library modules, so the pipeline can be run one stage at a time.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .corpus import (CipherSpec, generate_cipher_pair, generate_toy_corpus, read_corpus, read_dictionary,
                     write_corpus, write_dictionary)
from .em import TabularInstance, marginal_diagnostic, objective, run_em
from .embed import (CrossLingualMap, EmbeddingSpace, PPMIEmbedding, SelfLearningAligner, bootstrap_seed,
                    seed_dictionary)
from .evaluation import bleu, emit_curves
from .lm import KneserNeyLM
from .phrase import EmbeddingPhraseTable, PhraseTable
from .seq2seq import Seq2Seq
from .smt import DecoderConfig, generate_initial_synthetic
from .trainer import EpochRecord, DirectionRecord, LMDrivenTranslator
from .weighting import raw_log_weights, normalize_weights, read_synthetic, write_inspection, write_synthetic

log = logging.getLogger("lmumt")


class CommandError(Exception):
    """A failure reported to the user as a one-line diagnostic."""


def _corpus(path, tokenized):
    if not Path(path).exists():
        raise CommandError(f"no such file: {path}")
    return read_corpus(path, tokenized=tokenized)


# --------------------------------------------------------------------------
# subcommands

def cmd_make_cipher(a):
    if a.corpus:
        corpus_y = _corpus(a.corpus, a.tokenized)
    else:
        corpus_y = generate_toy_corpus(a.toy, seed=a.seed)
    spec = CipherSpec(seed=a.seed, reorder_window=a.reorder_window, drop_rate=a.drop_rate)
    pair = generate_cipher_pair(corpus_y, spec, dev_size=a.dev_size, test_size=a.test_size)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("train_x", "train_y", "dev_x", "dev_y", "test_x", "test_y"):
        write_corpus(out / name.replace("_", "."), getattr(pair, name))
    write_dictionary(out / "gold.dict", sorted(pair.gold_x_to_y.items()))
    print(f"wrote cipher pair to {out}: {len(pair.train_x)} / {len(pair.train_y)} train, "
          f"{len(pair.dev_x)} dev, {len(pair.test_x)} test, {len(pair.gold_dict)} dictionary entries")


def cmd_train_lm(a):
    model = KneserNeyLM(order=a.order, discount=a.discount).fit(_corpus(a.corpus, a.tokenized))
    model.save(a.out)
    msg = f"wrote order-{a.order} LM over {len(model.vocab_)} types to {a.out}"
    if a.heldout:
        msg += f"; held-out perplexity {model.perplexity(_corpus(a.heldout, a.tokenized)):.3f}"
    print(msg)


def cmd_train_embed(a):
    space = PPMIEmbedding(dim=a.dim, window=a.window).fit(_corpus(a.corpus, a.tokenized)).space_
    space.save(a.out)
    print(f"wrote {len(space)} x {space.dim} embeddings to {a.out}")


def cmd_map_embed(a):
    E_x, E_y = EmbeddingSpace.load(a.src_emb), EmbeddingSpace.load(a.tgt_emb)
    if a.seed_dict:
        seed = read_dictionary(a.seed_dict)
    else:
        seed = seed_dictionary(E_x, E_y, a.min_anchors, a.seed_top)
        if a.bootstrap and not all(x == y for x, y in seed):
            seed = bootstrap_seed(E_x, E_y, seed, a.anchors)
    mapping = SelfLearningAligner(rounds=a.rounds).fit(E_x, E_y, seed).map_
    mapping.save(a.out)
    if a.dict_out:
        write_dictionary(a.dict_out, [(x, y) for x, y, _ in mapping.induced_dict])
    print(f"wrote map to {a.out}: {len(seed)} seed pairs, {len(mapping.induced_dict)} induced, "
          f"mean cosine {mapping.history[-1]:.4f}")


def cmd_phrase_table(a):
    E_x, E_y = EmbeddingSpace.load(a.src_emb), EmbeddingSpace.load(a.tgt_emb)
    mapping = CrossLingualMap.load(a.map)
    if a.reverse:
        mapping = CrossLingualMap(mapping.M.T)
    cx = _corpus(a.src_corpus, a.tokenized) if a.src_corpus else None
    cy = _corpus(a.tgt_corpus, a.tokenized) if a.tgt_corpus else None
    est = EmbeddingPhraseTable(max_phrase_len=a.max_len, top_k=a.top_k, lam=a.lam, min_count=a.min_count)
    table = est.fit(mapping, E_x, E_y, cx, cy).table_
    table.save(a.out)
    print(f"wrote {len(table)} source phrases to {a.out}")


def cmd_init_synthetic(a):
    table = PhraseTable.load(a.table)
    lm = KneserNeyLM.load(a.lm)
    cfg = DecoderConfig(beam_size=a.beam, distortion_limit=a.distortion_limit,
                        distortion_weight=a.distortion_weight, unk_penalty=a.unk_penalty,
                        max_candidates=a.max_candidates)
    pairs = generate_initial_synthetic(_corpus(a.input, a.tokenized), table, lm, cfg)
    write_synthetic(a.out, pairs)
    print(f"wrote {len(pairs)} synthetic pairs to {a.out}")


def _run_config(a) -> RunConfig:
    overrides = dict(kv.split("=", 1) for kv in a.overrides)
    for flag, key in (("mode", "train.mode"), ("seed", "seed"), ("output_dir", "paths.output_dir"),
                      ("max_epochs", "train.max_epochs"), ("mono_x", "paths.mono_x"), ("mono_y", "paths.mono_y"),
                      ("dev_x", "paths.dev_x"), ("dev_y", "paths.dev_y")):
        if getattr(a, flag) is not None:
            overrides[key] = str(getattr(a, flag))
    try:
        if a.config:
            return RunConfig.load(a.config, overrides)
        return RunConfig.loads("", overrides)
    except (KeyError, ValueError) as exc:
        raise CommandError(str(exc).strip("'\"")) from None


def cmd_train(a):
    cfg = _run_config(a)
    p = cfg.paths
    missing = [k for k in ("mono_x", "mono_y", "dev_x", "dev_y") if getattr(p, k) is None]
    if missing:
        raise CommandError("missing corpus path(s): " + ", ".join(f"paths.{k}" for k in missing))
    if p.output_dir is None:
        raise CommandError("missing paths.output_dir (flag --output-dir)")
    out = Path(p.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "effective.cfg")
    data = [_corpus(getattr(p, k), p.tokenized) for k in ("mono_x", "mono_y", "dev_x", "dev_y")]
    model = LMDrivenTranslator(cfg).fit(*data)
    state = model.state_
    last = state.history[-1]
    print(json.dumps({"epochs": len(state.history), "smt_dev_bleu": state.smt_dev_bleu,
                      "final_dev_bleu": {k: v.dev_bleu for k, v in last.directions.items()},
                      "output_dir": str(out)}, sort_keys=True))


def cmd_eval_bleu(a):
    hyp, ref = _corpus(a.hyp, True), _corpus(a.ref, True)
    if len(hyp) != len(ref):
        raise CommandError(f"{a.hyp} has {len(hyp)} lines but {a.ref} has {len(ref)}")
    print(bleu(hyp, ref, max_n=a.max_n))


def cmd_inspect_weights(a):
    model = Seq2Seq.load(a.model)
    lm_x, lm_y = KneserNeyLM.load(a.lm_x), KneserNeyLM.load(a.lm_y)
    pairs = read_synthetic(a.synthetic)
    scored = raw_log_weights([p.x for p in pairs], [p.y for p in pairs], lm_x, lm_y, model)
    w = normalize_weights([p.log_w_raw for p in scored])
    for p, wi in zip(scored, w):
        p.w_star = float(wi)
    write_inspection(a.out, scored)
    print(f"wrote {len(scored)} scored pairs to {a.out}; mean weight {float(np.mean(w)):.4f}")


def cmd_em_harness(a):
    rng = np.random.default_rng(a.seed)
    inst = TabularInstance(rng.dirichlet(np.ones(a.size)), rng.dirichlet(np.ones(a.size)))
    thetas = run_em(inst, inst.random_theta(rng), a.steps)
    values = [objective(inst, th) for th in thetas]
    for i, (v, th) in enumerate(zip(values, thetas)):
        print(f"{i}\t{v!r}\t{marginal_diagnostic(inst, th)!r}")
    drops = [i for i in range(1, len(values)) if values[i] < values[i - 1] - a.tol]
    if drops:
        raise CommandError(f"objective decreased at step {drops[0]}")


def cmd_emit_curves(a):
    src = Path(a.history)
    if src.is_dir():
        states = sorted(src.glob("epoch_*/state.json"), key=lambda q: int(q.parent.name.split("_")[1]))
        if not states:
            raise CommandError(f"no epoch_*/state.json under {src}")
        src = states[-1]
    record = json.loads(src.read_text(encoding="utf-8"))
    history = [EpochRecord(r["epoch"], {k: DirectionRecord(**v) for k, v in r["directions"].items()},
                           r["source"], r["seconds"]) for r in record["history"]]
    text = emit_curves(history)
    if a.out:
        Path(a.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="lmumt", formatter_class=fmt,
                                     description="LM-driven unsupervised translation on monolingual corpora.")
    parser.add_argument("--threads", type=int, default=1, help="cap on BLAS worker threads")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", metavar="command")
    d = RunConfig()

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_, formatter_class=fmt)
        p.set_defaults(func=func)
        return p

    def tokenized(p):
        p.add_argument("--tokenized", action="store_true", default=False,
                       help="input is already space-tokenized; split on spaces only")

    p = add("make-cipher", cmd_make_cipher, "build a synthetic cipher language pair")
    p.add_argument("--corpus", default=None, help="Y-side text; a toy corpus is generated when omitted")
    p.add_argument("--toy", type=int, default=20000, help="toy corpus size in sentences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reorder-window", type=int, default=2)
    p.add_argument("--drop-rate", type=float, default=0.0)
    p.add_argument("--dev-size", type=int, default=500)
    p.add_argument("--test-size", type=int, default=500)
    p.add_argument("--out", required=True, help="output directory")
    tokenized(p)

    p = add("train-lm", cmd_train_lm, "train an interpolated Kneser-Ney n-gram LM")
    p.add_argument("--corpus", required=True)
    p.add_argument("--order", type=int, default=d.lm.order)
    p.add_argument("--discount", type=float, default=d.lm.discount)
    p.add_argument("--heldout", default=None, help="report perplexity on this corpus")
    p.add_argument("--out", required=True)
    tokenized(p)

    p = add("train-embed", cmd_train_embed, "train PPMI-SVD word embeddings")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dim", type=int, default=d.embed.dim)
    p.add_argument("--window", type=int, default=d.embed.window)
    p.add_argument("--out", required=True)
    tokenized(p)

    p = add("map-embed", cmd_map_embed, "learn an orthogonal cross-lingual map by self-learning")
    p.add_argument("--src-emb", required=True)
    p.add_argument("--tgt-emb", required=True)
    p.add_argument("--seed-dict", default=None, help="TSV seed pairs; unsupervised seeding when omitted")
    p.add_argument("--rounds", type=int, default=d.embed.rounds)
    p.add_argument("--min-anchors", type=int, default=d.embed.min_anchors)
    p.add_argument("--seed-top", type=int, default=d.embed.seed_top)
    p.add_argument("--anchors", type=int, default=d.embed.anchors)
    p.add_argument("--no-bootstrap", dest="bootstrap", action="store_false", default=d.embed.bootstrap,
                   help="use the frequency-rank seed as is")
    p.add_argument("--dict-out", default=None, help="write the induced dictionary here")
    p.add_argument("--out", required=True)

    p = add("phrase-table", cmd_phrase_table, "infer a phrase table from mapped embeddings")
    p.add_argument("--map", required=True)
    p.add_argument("--src-emb", required=True)
    p.add_argument("--tgt-emb", required=True)
    p.add_argument("--src-corpus", default=None)
    p.add_argument("--tgt-corpus", default=None)
    p.add_argument("--reverse", action="store_true", default=False, help="use the transposed map")
    p.add_argument("--max-len", type=int, default=d.phrase.max_len)
    p.add_argument("--top-k", type=int, default=d.phrase.top_k)
    p.add_argument("--lam", type=float, default=d.embed.lam)
    p.add_argument("--min-count", type=int, default=d.phrase.min_count)
    p.add_argument("--out", required=True)
    tokenized(p)

    p = add("init-synthetic", cmd_init_synthetic, "decode observed sentences with the noisy-channel SMT decoder")
    p.add_argument("--table", required=True, help="phrase table phi(observed | decoded)")
    p.add_argument("--lm", required=True, help="LM of the decoded side")
    p.add_argument("--input", required=True)
    p.add_argument("--beam", type=int, default=d.smt.beam)
    p.add_argument("--distortion-limit", type=int, default=d.smt.distortion_limit)
    p.add_argument("--distortion-weight", type=float, default=d.smt.distortion_weight)
    p.add_argument("--unk-penalty", type=float, default=d.smt.unk_penalty)
    p.add_argument("--max-candidates", type=int, default=d.smt.max_candidates)
    p.add_argument("--out", required=True)
    tokenized(p)

    p = add("train", cmd_train, "run the iterative back-translation loop")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--mode", default=None, choices=["weighted", "uniform"],
                   help=f"synthetic-pair weighting (config default: {d.train.mode})")
    p.add_argument("--seed", type=int, default=None, help=f"(config default: {d.seed})")
    p.add_argument("--max-epochs", type=int, default=None, help=f"(config default: {d.train.max_epochs})")
    p.add_argument("--mono-x", default=None)
    p.add_argument("--mono-y", default=None)
    p.add_argument("--dev-x", default=None)
    p.add_argument("--dev-y", default=None)
    p.add_argument("--output-dir", default=None)
    p.add_argument("overrides", nargs="*", metavar="key=value", help="extra config overrides")

    p = add("eval-bleu", cmd_eval_bleu, "corpus BLEU of tokenized hypotheses against references")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--max-n", type=int, default=4)

    p = add("inspect-weights", cmd_inspect_weights, "score synthetic pairs with the weight function")
    p.add_argument("--model", required=True, help="forward checkpoint, synthetic source -> real target")
    p.add_argument("--lm-x", required=True, help="LM of the synthetic source side")
    p.add_argument("--lm-y", required=True, help="LM of the real target side")
    p.add_argument("--synthetic", required=True, help="TSV of source, target[, weight]")
    p.add_argument("--out", required=True)

    p = add("em-harness", cmd_em_harness, "exact EM on a random tabular instance; checks monotonicity")
    p.add_argument("--size", type=int, default=4)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-9)

    p = add("emit-curves", cmd_emit_curves, "per-epoch dev BLEU / weight / loss as CSV")
    p.add_argument("--history", required=True, help="state.json or a training output directory")
    p.add_argument("--out", default=None, help="write here instead of stdout")
    # options without a help string still list their default
    for sp in [parser, *sub.choices.values()]:
        for action in sp._actions:
            if action.help is None and action.default not in (None, argparse.SUPPRESS):
                action.help = "default: %(default)s"
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(name)s %(message)s")
    from threadpoolctl import threadpool_limits

    try:
        with threadpool_limits(limits=args.threads):
            args.func(args)
    except (CommandError, ValueError, KeyError, OSError, RuntimeError) as exc:
        msg = str(exc).strip("'\"").splitlines()[0] if str(exc) else type(exc).__name__
        print(f"lmumt {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
