import json
from dataclasses import asdict

import pytest

import lmumt.trainer as trainer_mod
from lmumt.config import RunConfig
from lmumt.corpus import CipherSpec, generate_cipher_pair, generate_toy_corpus
from lmumt.trainer import (DirectionRecord, EpochRecord, LMDrivenTranslator, PipelineError, converged,
                           run_unsupervised)


def rec(total):
    return EpochRecord(0, {"x-y": DirectionRecord(total, 1.0, 0.0), "y-x": DirectionRecord(0.0, 1.0, 0.0)}, "nmt")


def test_converged_examples():
    assert not converged([rec(v) for v in (1, 2, 3, 4, 5)], patience=2)
    assert converged([rec(3)] * 4, patience=3)
    assert not converged([rec(3)] * 2, patience=3)
    assert converged([rec(v) for v in (1, 2, 3)], patience=3, max_epochs=1)
    with pytest.raises(ValueError):
        converged([], patience=0)


@pytest.fixture(scope="module")
def small():
    Y = generate_toy_corpus(1500, seed=2)
    pair = generate_cipher_pair(Y, CipherSpec(seed=2, reorder_window=2), dev_size=30, test_size=10)
    cfg = RunConfig.loads("\n".join([
        "embed.dim=24", "nmt.d_m=12", "nmt.lr=0.5", "nmt.passes=1", "train.sub_dataset_size=60",
        "train.dev_size=20", "train.beam_eval=2", "train.max_epochs=2", "smt.beam=4",
    ]))
    return pair, cfg


def history_values(state):
    return [(r.epoch, r.source, {k: asdict(v) for k, v in r.directions.items()}) for r in state.history]


def test_max_epochs_zero_runs_only_smt_initialization(small):
    pair, cfg = small
    cfg = RunConfig.loads(cfg.dumps(), {"train.max_epochs": "0"})
    state = run_unsupervised(cfg, pair.train_x, pair.train_y, pair.dev_x, pair.dev_y)
    assert state.epoch == len(state.history) == 1
    assert state.history[0].source == "smt"
    assert state.forward.n_updates_ > 0 and state.backward.n_updates_ > 0


def test_same_seed_gives_identical_history(small):
    pair, cfg = small
    a = run_unsupervised(cfg, pair.train_x, pair.train_y, pair.dev_x, pair.dev_y)
    b = run_unsupervised(cfg, pair.train_x, pair.train_y, pair.dev_x, pair.dev_y)
    assert history_values(a) == history_values(b)
    assert a.epoch == len(a.history) == 3
    assert [r.source for r in a.history] == ["smt", "nmt", "nmt"]
    for r in a.history[1:]:
        assert all(0 < d.mean_weight < 1 for d in r.directions.values())


def test_epoch_zero_uses_smt_only_and_later_epochs_nmt_only(small, monkeypatch):
    pair, cfg = small
    calls = []
    real_smt = trainer_mod.generate_initial_synthetic
    real_beam = trainer_mod.Seq2Seq.predict

    def smt(*a, **k):
        calls.append("smt")
        return real_smt(*a, **k)

    def beam(self, xs, beam_size=4, max_len=None):
        calls.append(("beam", beam_size))
        return real_beam(self, xs, beam_size, max_len)

    monkeypatch.setattr(trainer_mod, "generate_initial_synthetic", smt)
    monkeypatch.setattr(trainer_mod.Seq2Seq, "predict", beam)
    tr = LMDrivenTranslator(cfg)
    state = tr.init_state(tr.prepare(pair.train_x, pair.train_y))
    for epoch in range(2):
        calls.clear()
        tr.run_epoch(state, pair.train_x, pair.train_y, pair.dev_x, pair.dev_y)
        generation = [c for c in calls if c == "smt" or c[1] == cfg.train.beam_train]
        if epoch == 0:
            assert generation == ["smt", "smt"]
        else:
            assert generation == [("beam", 4), ("beam", 4)]


def test_errors_identify_epoch_and_phase(small, monkeypatch):
    pair, cfg = small
    tr = LMDrivenTranslator(cfg)
    state = tr.init_state(tr.prepare(pair.train_x, pair.train_y))

    def boom(*a, **k):
        raise RuntimeError("decoder exploded")

    monkeypatch.setattr(trainer_mod, "generate_initial_synthetic", boom)
    with pytest.raises(PipelineError, match="epoch 0, phase generate"):
        tr.run_epoch(state, pair.train_x, pair.train_y, pair.dev_x, pair.dev_y)


def test_checkpoints_and_history_files(small, tmp_path):
    pair, cfg = small
    cfg = RunConfig.loads(cfg.dumps(), {"train.max_epochs": "1", "paths.output_dir": str(tmp_path)})
    est = LMDrivenTranslator(cfg).fit(pair.train_x, pair.train_y, pair.dev_x, pair.dev_y)
    for e in (0, 1):
        d = tmp_path / f"epoch_{e}"
        assert (d / "forward.ckpt").exists() and (d / "backward.ckpt").exists()
        record = json.loads((d / "state.json").read_text())
        assert record["epoch"] == e + 1
    lines = (tmp_path / "history.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 2
    assert RunConfig.load(tmp_path / "effective.cfg") == cfg
    assert len(est.predict(pair.dev_x[:3])) == 3


def test_fit_requires_dev_and_corpora(small):
    pair, cfg = small
    with pytest.raises(ValueError):
        LMDrivenTranslator(cfg).fit([], pair.train_y, pair.dev_x, pair.dev_y)
    with pytest.raises(ValueError):
        LMDrivenTranslator(cfg).fit(pair.train_x, pair.train_y)
