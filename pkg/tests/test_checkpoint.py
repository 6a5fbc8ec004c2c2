import json

import numpy as np
import pytest

from glossgen.checkpoint import (FORMAT_VERSION, META_KEY, CheckpointError,
                                 load_checkpoint, load_pretrained, read_meta,
                                 save_checkpoint, save_pretrained)
from glossgen.config import Config, DataConfig, ModelConfig, TrainConfig, config_to_dict
from glossgen.data import DictionaryEntry, Vocabulary
from glossgen.models import DefinitionModel

WORDS = ["check", "run", "walk", "cat", "dog", "sun", "tree", "bird",
         "fish", "rock", "rain", "wind", "fire", "snow", "moon", "star"]


def micro_cfg(**kw):
    base = dict(d_w=8, d_h=4, d_s=8, d_attn=8, d_e=8, max_gen_len=8,
                char_on=False, contextual_on=False)
    base.update(kw)
    return ModelConfig(**base)


def full_cfg(**kw):
    return Config(model=micro_cfg(**kw), train=TrainConfig(max_epochs=2),
                  data=DataConfig())


def entry(word="check", definition=("a", "small", "mark")):
    context = ["the", word, "is", "here"]
    return DictionaryEntry(
        entry_id=f"{word}.1", word=word, pos="n", sense_id="s1",
        definition=list(definition), contexts=[context],
        context_target_indices=[1], usage=None, usage_target_index=None)


def build(seed=0, **kw):
    return DefinitionModel(micro_cfg(**kw), Vocabulary(WORDS), seed=seed)


def _tamper(path, new_path, **meta_changes):
    """Rewrite a checkpoint with edited header fields."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data[META_KEY]))
        arrays = {k: data[k] for k in data.files if k != META_KEY}
    meta.update(meta_changes)
    with open(new_path, "wb") as fh:
        np.savez(fh, **{META_KEY: np.array(json.dumps(meta))}, **arrays)


class TestRoundTrip:
    def test_state_is_bit_exact(self, tmp_path):
        model = build(seed=3)
        path = tmp_path / "m.npz"
        save_checkpoint(path, model, full_cfg())
        loaded, _, _ = load_checkpoint(path)
        orig = model.state_arrays()
        new = loaded.state_arrays()
        assert sorted(orig) == sorted(new)
        for name in orig:
            assert np.array_equal(orig[name], new[name]), name

    def test_forward_identical_after_reload(self, tmp_path):
        model = build(seed=5, kind="hier-du", s0_variant="word")
        e = entry()
        e.usage = ["the", "check", "works"]
        path = tmp_path / "m.npz"
        save_checkpoint(path, model, full_cfg(kind="hier-du", s0_variant="word"))
        loaded, _, _ = load_checkpoint(path)
        a = model.forward_batch([e])
        b = loaded.forward_batch([e])
        assert a.def_total_nll == b.def_total_nll
        assert a.usg_total_nll == b.usg_total_nll

    def test_config_round_trips(self, tmp_path):
        cfg = full_cfg(kind="parallel", gate_on=False)
        model = build(seed=1, kind="parallel", gate_on=False)
        path = tmp_path / "m.npz"
        save_checkpoint(path, model, cfg)
        _, cfg2, meta = load_checkpoint(path)
        assert config_to_dict(cfg2) == config_to_dict(cfg)
        assert meta["seed"] == 1

    def test_mutating_original_does_not_touch_reload(self, tmp_path):
        model = build(seed=0)
        path = tmp_path / "m.npz"
        save_checkpoint(path, model, full_cfg())
        loaded, _, _ = load_checkpoint(path)
        ref = loaded.params()["attn.W_Q"].data.copy()
        model.params()["attn.W_Q"].data[...] = 99.0
        assert np.array_equal(loaded.params()["attn.W_Q"].data, ref)

    def test_extra_meta_preserved(self, tmp_path):
        model = build()
        path = tmp_path / "m.npz"
        save_checkpoint(path, model, full_cfg(), extra_meta={"valid_ppl": 2.5})
        assert read_meta(path)["valid_ppl"] == 2.5


class TestGuards:
    def test_fingerprint_mismatch_rejected(self, tmp_path):
        model = build()
        path, bad = tmp_path / "m.npz", tmp_path / "bad.npz"
        save_checkpoint(path, model, full_cfg())
        _tamper(path, bad, vocab_fingerprint="0" * 64)
        with pytest.raises(CheckpointError, match="fingerprint"):
            load_checkpoint(bad)

    def test_future_format_version_rejected(self, tmp_path):
        model = build()
        path, bad = tmp_path / "m.npz", tmp_path / "bad.npz"
        save_checkpoint(path, model, full_cfg())
        _tamper(path, bad, format_version=FORMAT_VERSION + 1)
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(bad)

    def test_headerless_file_rejected(self, tmp_path):
        path = tmp_path / "not.npz"
        with open(path, "wb") as fh:
            np.savez(fh, a=np.zeros(3))
        with pytest.raises(CheckpointError, match="header"):
            load_checkpoint(path)
        with pytest.raises(CheckpointError, match="header"):
            read_meta(path)


class TestPretrained:
    def test_round_trip_restores_decoder_branch(self, tmp_path):
        src = build(seed=7)
        dst = build(seed=8)
        path = tmp_path / "pre.npz"
        save_pretrained(path, src)
        names = load_pretrained(path, dst)
        assert "emb.specials" in names and any(n.startswith("def.") for n in names)
        for name, t in src.pretrainable_params().items():
            assert np.array_equal(t.data, dst.pretrainable_params()[name].data)

    def test_encoder_untouched_by_warm_start(self, tmp_path):
        src, dst = build(seed=7), build(seed=8)
        before = dst.params()["enc.fwd.W_z"].data.copy()
        path = tmp_path / "pre.npz"
        save_pretrained(path, src)
        load_pretrained(path, dst)
        assert np.array_equal(dst.params()["enc.fwd.W_z"].data, before)

    def test_width_mismatch_rejected(self, tmp_path):
        src = build(seed=0)
        dst = DefinitionModel(micro_cfg(d_s=12), Vocabulary(WORDS), seed=0)
        path = tmp_path / "pre.npz"
        save_pretrained(path, src)
        with pytest.raises(CheckpointError):
            load_pretrained(path, dst)

    def test_vocab_mismatch_rejected(self, tmp_path):
        src = build(seed=0)
        dst = DefinitionModel(micro_cfg(), Vocabulary(WORDS[:8]), seed=0)
        path = tmp_path / "pre.npz"
        save_pretrained(path, src)
        with pytest.raises(CheckpointError, match="fingerprint"):
            load_pretrained(path, dst)

    def test_full_checkpoint_is_not_a_pretrained_file(self, tmp_path):
        model = build()
        path = tmp_path / "m.npz"
        save_checkpoint(path, model, full_cfg())
        with pytest.raises(CheckpointError, match="pretrained"):
            load_pretrained(path, model)
