import numpy as np
import pytest

from glossgen import embeddings as E
from glossgen.autodiff import AdamState, Tape, adam_step, backward, grad_check, mul, sum_all
from glossgen.data import DictionaryEntry, Vocabulary


def small_vocab():
    return Vocabulary(["cat", "dog", "bird"])


def write_vectors(path, rows, header=None):
    with open(path, "w") as fh:
        if header:
            fh.write(header + "\n")
        for token, vec in rows:
            fh.write(token + " " + " ".join(str(x) for x in vec) + "\n")
    return path


class TestWordEmbeddings:
    def test_direct_load_full_coverage(self, tmp_path):
        path = write_vectors(tmp_path / "v.txt", [("cat", [1, 0]), ("dog", [0, 1]),
                                                  ("bird", [1, 1])])
        table, coverage = E.load_word_embeddings(path, small_vocab(), seed=0)
        assert coverage == 1.0
        assert np.array_equal(table.tensor.data[4], [1, 0])
        assert np.array_equal(table.tensor.data[5], [0, 1])

    def test_missing_token_sampled(self, tmp_path):
        path = write_vectors(tmp_path / "v.txt", [("cat", [1, 0])])
        table, coverage = E.load_word_embeddings(path, small_vocab(), seed=0)
        assert coverage == pytest.approx(1 / 3)
        row = table.tensor.data[5]
        assert np.all(np.abs(row) <= 0.1) and np.any(row != 0)

    def test_pad_row_zero(self, tmp_path):
        path = write_vectors(tmp_path / "v.txt", [("cat", [1, 0])])
        table, _ = E.load_word_embeddings(path, small_vocab(), seed=0)
        assert np.all(table.tensor.data[0] == 0)

    def test_header_tolerated(self, tmp_path):
        path = write_vectors(tmp_path / "v.txt", [("cat", [1, 0])], header="1 2")
        table, _ = E.load_word_embeddings(path, small_vocab(), seed=0)
        assert table.shape == (7, 2)

    def test_wrong_arity_names_line(self, tmp_path):
        path = write_vectors(tmp_path / "v.txt", [("cat", [1, 0]), ("dog", [1, 2, 3])])
        with pytest.raises(E.EmbeddingError, match=":2:"):
            E.load_word_embeddings(path, small_vocab(), seed=0)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("")
        with pytest.raises(E.EmbeddingError, match="empty"):
            E.load_word_embeddings(path, small_vocab(), seed=0)

    def test_frozen_table_untouched_by_adam(self, tmp_path):
        path = write_vectors(tmp_path / "v.txt", [("cat", [1.0, 0.5])])
        table, _ = E.load_word_embeddings(path, small_vocab(), seed=0, trainable=False)
        before = table.tensor.data.copy()
        assert table.params("enc") == {}
        # a frozen table contributes no parameters, so updates cannot move it
        state = AdamState()
        for _ in range(3):
            adam_step(table.params("enc"), state)
        assert np.array_equal(table.tensor.data, before)

    def test_trainable_table_moves(self):
        table = E.random_word_embeddings(small_vocab(), dim=4, seed=1, trainable=True)
        params = table.params("enc")
        assert set(params) == {"enc.table"}
        with Tape() as tape:
            rows = table.lookup([4, 5])
            backward(tape, sum_all(mul(rows, rows)))
        before = table.tensor.data.copy()
        adam_step(params, AdamState(lr=0.01))
        assert not np.array_equal(table.tensor.data, before)


class TestCharEncoder:
    def test_output_dim_160(self):
        enc = E.CharEncoder(np.random.default_rng(0))
        for word in ["a", "like", "dislike", "extraordinarily"]:
            out = enc.encode(word)
            assert out.shape == (1, 160)

    def test_deterministic_per_word(self):
        enc = E.CharEncoder(np.random.default_rng(0))
        a = enc.encode("check").data
        b = enc.encode("check").data
        assert np.array_equal(a, b)

    def test_different_words_differ(self):
        enc = E.CharEncoder(np.random.default_rng(0))
        a = enc.encode("like").data
        b = enc.encode("dislike").data
        assert not np.allclose(a, b)

    def test_empty_word_rejected(self):
        enc = E.CharEncoder(np.random.default_rng(0))
        with pytest.raises(E.EmbeddingError):
            enc.encode("")

    def test_unknown_chars_fall_back(self):
        enc = E.CharEncoder(np.random.default_rng(0))
        out = enc.encode("naïve")
        assert out.shape == (1, 160)

    def test_carry_only_highway_is_identity(self):
        enc = E.CharEncoder(np.random.default_rng(0))
        # transform gate forced shut: t ~ 0 so each highway layer passes input
        for layer in range(E.HIGHWAY_LAYERS):
            enc._params[f"char.hw{layer}.b_T"].data[...] = -1e3
        with_gates = enc.encode("check").data

        pieces = []
        p = enc._params
        ids = enc.char_vocab.encode("check", min_len=6)
        emb = p["char.table"].data[ids]
        for w, n in zip(E.CONV_WIDTHS, E.CONV_COUNTS):
            k = p[f"char.conv{w}.kernel"].data
            lout = len(ids) - w + 1
            conv = np.zeros((lout, n))
            for i in range(w):
                conv += emb[i:i + lout] @ k[i]
            feat = np.tanh(conv + p[f"char.conv{w}.bias"].data)
            pieces.append(feat.max(axis=0))
        pre_highway = np.concatenate(pieces)[None, :]
        assert np.allclose(with_gates, pre_highway, atol=1e-9)

    def test_zero_filters_give_tanh_bias(self):
        enc = E.CharEncoder(np.random.default_rng(0))
        for w in E.CONV_WIDTHS:
            enc._params[f"char.conv{w}.kernel"].data[...] = 0.0
            enc._params[f"char.conv{w}.bias"].data[...] = 0.3
        for layer in range(E.HIGHWAY_LAYERS):
            enc._params[f"char.hw{layer}.b_T"].data[...] = -1e3
        out = enc.encode("word").data
        assert np.allclose(out, np.tanh(0.3))

    def test_gradients_flow(self):
        enc = E.CharEncoder(np.random.default_rng(3))
        params = enc.params()
        with Tape() as tape:
            out = enc.encode("cat")
            backward(tape, sum_all(mul(out, out)))
        table_grad = params["char.table"].grad
        assert np.any(table_grad != 0)

    def test_grad_check_small(self):
        enc = E.CharEncoder(np.random.default_rng(4))
        kernel = enc._params["char.conv2.kernel"]

        def f(kernel):
            out = enc.encode("dog")
            return sum_all(mul(out, out))

        assert grad_check(f, [kernel], coord_limit=20, seed=0) < 1e-6


class TestContextualProvider:
    def make_entry(self, contexts, indices, word="check"):
        return DictionaryEntry(
            entry_id="e1", word=word, pos="n", sense_id="s1",
            definition=["a", "thing"], contexts=contexts,
            context_target_indices=indices)

    def test_deterministic_same_input(self):
        p = E.ContextualProvider("deterministic-test", dim=16, seed=1)
        ctx = ["he", "paid", "the", "check"]
        assert np.array_equal(p.embed(ctx, 3), p.embed(ctx, 3))

    def test_different_neighbors_differ(self):
        p = E.ContextualProvider("deterministic-test", dim=16, seed=1)
        a = p.embed(["the", "check", "bounced"], 1)
        b = p.embed(["a", "check", "mark"], 1)
        assert not np.allclose(a, b)

    def test_unit_norm(self):
        p = E.ContextualProvider("deterministic-test", dim=32, seed=5)
        for ctx, i in [(["lone"], 0), (["a", "b", "c"], 1), (["x", "y"], 1)]:
            v = p.embed(ctx, i)
            assert abs(np.linalg.norm(v) - 1.0) <= 1e-9

    def test_index_out_of_range(self):
        p = E.ContextualProvider("deterministic-test", dim=8)
        with pytest.raises(E.EmbeddingError):
            p.embed(["one", "two"], 2)

    def test_absent_occurrence_falls_back_to_word(self):
        p = E.ContextualProvider("deterministic-test", dim=8, seed=2)
        entry = self.make_entry([["unrelated", "words"]], [None])
        v = p.embed_for_entry(entry)
        assert np.array_equal(v, p.embed_word_alone("check"))

    def test_file_backed_lookup(self, tmp_path):
        path = tmp_path / "ctx.txt"
        path.write_text("e1 " + " ".join(["0.5"] * 4) + "\n")
        p = E.load_contextual_file(path, dim=4)
        assert np.array_equal(p.embed_entry_id("e1"), [0.5] * 4)

    def test_file_backed_missing_key(self, tmp_path):
        path = tmp_path / "ctx.txt"
        path.write_text("e1 1 2 3 4\n")
        p = E.load_contextual_file(path, dim=4)
        with pytest.raises(E.EmbeddingError, match="e9"):
            p.embed_entry_id("e9")

    def test_file_backed_length_checked(self, tmp_path):
        path = tmp_path / "ctx.txt"
        path.write_text("e1 1 2 3\n")
        with pytest.raises(E.EmbeddingError, match=":1:"):
            E.load_contextual_file(path, dim=4)

    def test_unknown_kind(self):
        with pytest.raises(E.EmbeddingError):
            E.ContextualProvider("frozen-lm", dim=8)
