import numpy as np
import pytest

import glossgen.training as training
from glossgen.checkpoint import CheckpointError, load_checkpoint, load_pretrained
from glossgen.config import Config, DataConfig, ModelConfig, TrainConfig
from glossgen.data import DictionaryEntry, Vocabulary
from glossgen.models import DefinitionModel
from glossgen.training import (TrainingError, load_lm_sentences, make_query_entry,
                               pretrain_decoder, train, validation_ppl)

WORDS = ["check", "run", "walk", "cat", "dog", "sun", "tree", "bird",
         "fish", "rock", "rain", "wind", "fire", "snow", "moon", "star"]


def micro_cfg(**kw):
    base = dict(d_w=8, d_h=4, d_s=8, d_attn=8, d_e=8, max_gen_len=8,
                char_on=False, contextual_on=False)
    base.update(kw)
    return ModelConfig(**base)


def full_cfg(model_kw=None, **train_kw):
    train_kw.setdefault("batch_size", 4)
    train_kw.setdefault("max_epochs", 3)
    return Config(model=micro_cfg(**(model_kw or {})), train=TrainConfig(**train_kw),
                  data=DataConfig())


def entry(word, definition, usage=None, eid=None):
    context = ["the", word, "is", "here"]
    return DictionaryEntry(
        entry_id=eid or f"{word}.1", word=word, pos="n", sense_id="s1",
        definition=list(definition), contexts=[context],
        context_target_indices=[1],
        usage=list(usage) if usage else None, usage_target_index=None)


def corpus(with_usage=False):
    out = []
    for i, w in enumerate(WORDS[:8]):
        usage = ["the", w, "works"] if with_usage else None
        out.append(entry(w, [WORDS[(i + 1) % 8], "and", WORDS[(i + 2) % 8]],
                         usage=usage, eid=f"{w}.{i}"))
    return out


def build(seed=0, **kw):
    return DefinitionModel(micro_cfg(**kw), Vocabulary(WORDS), seed=seed)


class TestValidationPpl:
    def test_matches_pooled_forward_totals(self):
        model = build(seed=1, kind="parallel")
        entries = corpus(with_usage=True)
        out = model.forward_batch(entries)
        expected = np.exp((out.def_total_nll + out.usg_total_nll)
                          / (out.def_tokens + out.usg_tokens))
        assert validation_ppl(model, entries) == pytest.approx(expected, rel=1e-12)

    def test_single_kind_uses_definition_only(self):
        model = build(seed=1)
        entries = corpus()
        out = model.forward_batch(entries)
        expected = np.exp(out.def_total_nll / out.def_tokens)
        assert validation_ppl(model, entries) == pytest.approx(expected, rel=1e-12)

    def test_batch_size_does_not_change_result(self):
        model = build(seed=2)
        entries = corpus()
        a = validation_ppl(model, entries, batch_size=3)
        b = validation_ppl(model, entries, batch_size=8)
        assert a == pytest.approx(b, rel=1e-12)

    def test_empty_corpus_rejected(self):
        with pytest.raises(TrainingError, match="empty"):
            validation_ppl(build(), [])


class TestTrainLoop:
    def test_identical_seeds_identical_logs(self, tmp_path):
        logs = []
        for run in ("a", "b"):
            model = build(seed=4)
            path = tmp_path / f"{run}.jsonl"
            train(model, full_cfg(max_epochs=2), corpus(), corpus()[:4], log_path=path)
            logs.append(path.read_bytes())
        assert logs[0] == logs[1]

    def test_loss_decreases_on_memorizable_corpus(self):
        model = build(seed=0)
        result = train(model, full_cfg(max_epochs=4, lr=5e-3), corpus(), corpus()[:4])
        assert result.history[-1]["mean_train_loss"] < result.history[0]["mean_train_loss"]

    def test_first_logged_loss_is_plain_forward_nll(self, tmp_path):
        import json
        cfg = full_cfg(max_epochs=1)
        entries = corpus()
        ref_model = build(seed=9)
        rng = np.random.default_rng((cfg.train.seed, 1))
        first_batch = next(training._batches(entries, cfg.train.batch_size, rng))
        expected = float(ref_model.forward_batch(first_batch).loss.data)
        model = build(seed=9)
        path = tmp_path / "log.jsonl"
        train(model, cfg, entries, entries[:2], log_path=path)
        first = json.loads(path.read_text().splitlines()[0])
        assert first["loss"] == pytest.approx(expected, rel=1e-12)
        assert first["epoch"] == 1 and first["step"] == 1

    def test_patience_counts_consecutive_non_improving_epochs(self, monkeypatch):
        ppls = iter([5.0, 4.0, 4.5, 4.4, 4.3])
        monkeypatch.setattr(training, "validation_ppl", lambda *a, **k: next(ppls))
        result = train(build(), full_cfg(max_epochs=5, patience=1), corpus(), corpus()[:2])
        assert result.epochs_run == 4
        assert result.best_epoch == 2
        assert result.best_ppl == 4.0

    def test_patience_zero_stops_on_first_non_improvement(self, monkeypatch):
        ppls = iter([5.0, 4.0, 4.5, 4.4])
        monkeypatch.setattr(training, "validation_ppl", lambda *a, **k: next(ppls))
        result = train(build(), full_cfg(max_epochs=4, patience=0), corpus(), corpus()[:2])
        assert result.epochs_run == 3
        assert result.best_epoch == 2

    def test_stop_ppl_halts_early(self, monkeypatch):
        ppls = iter([3.0, 1.2, 1.1])
        monkeypatch.setattr(training, "validation_ppl", lambda *a, **k: next(ppls))
        result = train(build(), full_cfg(max_epochs=3, patience=5), corpus(),
                       corpus()[:2], stop_ppl=1.5)
        assert result.epochs_run == 2

    def test_non_finite_loss_names_batch_and_step(self):
        model = build(seed=0)
        model.params()["attn.W_Q"].data[...] = np.inf
        with np.errstate(invalid="ignore"):
            with pytest.raises(TrainingError, match=r"epoch 1 step 1.*check\.0"):
                train(model, full_cfg(batch_size=32), corpus(), corpus()[:2])

    def test_best_checkpoint_reproduces_best_ppl(self, tmp_path):
        cfg = full_cfg(max_epochs=3, lr=5e-3)
        path = tmp_path / "best.npz"
        valid = corpus()[:4]
        result = train(build(seed=1), cfg, corpus(), valid, checkpoint_path=path)
        loaded, _, meta = load_checkpoint(path)
        assert validation_ppl(loaded, valid) == pytest.approx(result.best_ppl, abs=1e-9)
        assert meta["best_epoch"] == result.best_epoch

    def test_frozen_table_never_moves(self):
        model = build(seed=2)
        before = model.embedding.frozen.data.copy()
        train(model, full_cfg(max_epochs=2), corpus(), corpus()[:2])
        assert np.array_equal(model.embedding.frozen.data, before)

    def test_multi_task_kinds_train(self):
        for kind in ("parallel", "hier-du", "hier-ud"):
            model = build(seed=3, kind=kind)
            result = train(model, full_cfg(model_kw={"kind": kind}, max_epochs=2),
                           corpus(with_usage=True), corpus(with_usage=True)[:4])
            assert all(np.isfinite(r["mean_train_loss"]) for r in result.history)
            assert np.isfinite(result.best_ppl)

    def test_empty_train_corpus_rejected(self):
        with pytest.raises(TrainingError, match="empty"):
            train(build(), full_cfg(), [], corpus()[:2])


class TestPretrain:
    def sentences(self, vocab):
        return [vocab.encode(["the", w, "is", "here"]) for w in WORDS[:8]]

    def test_zero_epochs_saves_initialization(self, tmp_path):
        model = build(seed=5)
        init = {n: t.data.copy() for n, t in model.pretrainable_params().items()}
        path = tmp_path / "pre.npz"
        history = pretrain_decoder(model, full_cfg(pretrain_epochs=0),
                                   self.sentences(model.vocab), out_path=path)
        assert history == []
        fresh = build(seed=6)
        load_pretrained(path, fresh)
        for name, arr in init.items():
            assert np.array_equal(fresh.pretrainable_params()[name].data, arr)

    def test_only_decoder_branch_moves(self):
        model = build(seed=5)
        enc_before = model.params()["enc.fwd.W_z"].data.copy()
        attn_before = model.params()["attn.W_Q"].data.copy()
        dec_before = model.params()["def.gru0.W_z"].data.copy()
        pretrain_decoder(model, full_cfg(pretrain_epochs=1), self.sentences(model.vocab))
        assert np.array_equal(model.params()["enc.fwd.W_z"].data, enc_before)
        assert np.array_equal(model.params()["attn.W_Q"].data, attn_before)
        assert not np.array_equal(model.params()["def.gru0.W_z"].data, dec_before)

    def test_loss_decreases(self):
        model = build(seed=5)
        history = pretrain_decoder(model, full_cfg(pretrain_epochs=4, lr=5e-3),
                                   self.sentences(model.vocab))
        assert history[-1]["mean_train_loss"] < history[0]["mean_train_loss"]

    def test_warm_start_transfers_language_model(self, tmp_path):
        shared = np.random.default_rng(0).normal(size=(20, 8))
        vocab = Vocabulary(WORDS)
        src = DefinitionModel(micro_cfg(), vocab, seed=5, pretrained_matrix=shared)
        path = tmp_path / "pre.npz"
        pretrain_decoder(src, full_cfg(pretrain_epochs=2), self.sentences(vocab),
                         out_path=path)
        dst = DefinitionModel(micro_cfg(), vocab, seed=11, pretrained_matrix=shared)
        load_pretrained(path, dst)
        seqs = self.sentences(vocab)[:3]
        _, src_total, _ = src.lm_loss(seqs)
        _, dst_total, _ = dst.lm_loss(seqs)
        assert src_total == pytest.approx(dst_total, rel=1e-12)

    def test_width_mismatch_rejected_on_warm_start(self, tmp_path):
        src = build(seed=0)
        path = tmp_path / "pre.npz"
        pretrain_decoder(src, full_cfg(pretrain_epochs=0), self.sentences(src.vocab),
                         out_path=path)
        wide = DefinitionModel(micro_cfg(d_s=12), Vocabulary(WORDS), seed=0)
        with pytest.raises(CheckpointError):
            load_pretrained(path, wide)

    def test_empty_corpus_rejected(self):
        with pytest.raises(TrainingError, match="empty"):
            pretrain_decoder(build(), full_cfg(), [])


class TestHelpers:
    def test_load_lm_sentences(self, tmp_path):
        path = tmp_path / "lm.txt"
        path.write_text("The cat is here\n\nthe DOG runs\n")
        vocab = Vocabulary(WORDS)
        seqs = load_lm_sentences(path, vocab)
        assert len(seqs) == 2
        assert seqs[0] == vocab.encode(["the", "cat", "is", "here"])

    def test_load_lm_sentences_empty_file(self, tmp_path):
        path = tmp_path / "lm.txt"
        path.write_text("\n\n")
        with pytest.raises(TrainingError, match="no usable"):
            load_lm_sentences(path, Vocabulary(WORDS))

    def test_make_query_entry(self):
        e = make_query_entry("Run", "She RUNS every day")
        assert e.word == "run"
        assert e.contexts == [["she", "runs", "every", "day"]]
        assert e.context_target_indices == [1]

    def test_make_query_entry_unmatched_target(self):
        e = make_query_entry("cat", "no felines around")
        assert e.context_target_indices == [None]

    def test_make_query_entry_rejects_blanks(self):
        with pytest.raises(TrainingError):
            make_query_entry("", "some context")
        with pytest.raises(TrainingError):
            make_query_entry("word", "   ")
