import numpy as np
import pytest

from glossgen import encoder as enc_mod
from glossgen.autodiff import ShapeError, Tensor, grad_check, mul, sum_all
from glossgen.embeddings import EmbeddingTable
from glossgen.encoder import ContextEncoder, GruCell, SenseAttention


def zeroed(cell):
    for t in cell.params().values():
        t.data[...] = 0.0
    return cell


class TestGruCell:
    def test_zero_params_halve_state(self):
        cell = zeroed(GruCell(np.random.default_rng(0), 3, 4, "c"))
        h = Tensor([[1.0, -2.0, 0.5, 4.0]])
        x = Tensor([[0.0, 0.0, 0.0]])
        out = cell.step(h, x)
        assert np.allclose(out.data, 0.5 * h.data)

    def test_zero_state_fixed_point(self):
        cell = zeroed(GruCell(np.random.default_rng(0), 3, 4, "c"))
        out = cell.step(cell.zero_state(1), Tensor([[0.0, 0.0, 0.0]]))
        assert np.allclose(out.data, 0.0)

    def test_batched_step(self):
        cell = GruCell(np.random.default_rng(1), 3, 4, "c")
        h = Tensor(np.random.default_rng(2).normal(size=(5, 4)))
        x = Tensor(np.random.default_rng(3).normal(size=(5, 3)))
        out = cell.step(h, x)
        assert out.shape == (5, 4)
        # row i of the batch equals a one-row step on row i
        one = cell.step(Tensor(h.data[2:3]), Tensor(x.data[2:3]))
        assert np.allclose(out.data[2], one.data[0])

    def test_dimension_mismatch(self):
        cell = GruCell(np.random.default_rng(0), 3, 4, "c")
        with pytest.raises(ShapeError, match="c:"):
            cell.step(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 3))))

    def test_gradient_check(self):
        rng = np.random.default_rng(4)
        cell = GruCell(rng, 3, 4, "c")
        h = Tensor(rng.normal(size=(1, 4)), requires_grad=True)
        x = Tensor(rng.normal(size=(1, 3)), requires_grad=True)
        point = [h, x] + list(cell.params().values())

        def f(h, x, *params):
            out = cell.step(h, x)
            return sum_all(mul(out, out))

        assert grad_check(f, point) < 1e-6

    def test_param_count(self):
        cell = GruCell(np.random.default_rng(0), 5, 7, "c")
        n = sum(t.size for t in cell.params().values())
        assert n == 3 * (5 * 7 + 7 * 7 + 7)


def make_encoder(seed=0, vocab=11, d_w=6, d_h=5, max_len=64):
    rng = np.random.default_rng(seed)
    table = EmbeddingTable(rng.uniform(-0.1, 0.1, size=(vocab, d_w)), trainable=True)
    return ContextEncoder(rng, table, d_h, max_len=max_len)


class TestContextEncoder:
    def test_shapes(self):
        enc = make_encoder()
        out = enc.encode([4, 5, 6, 7])
        assert out.H.shape == (4, 10)
        assert out.v_c.shape == (1, 10)

    def test_rows_are_fwd_bwd_concat(self):
        enc = make_encoder()
        out = enc.encode([4, 5, 6])
        # forward half of row 0 equals a single forward step from zero state
        x0 = Tensor(enc.table.tensor.data[4:5])
        f0 = enc.fwd.step(enc.fwd.zero_state(1), x0)
        assert np.allclose(out.H.data[0, :5], f0.data[0])
        # backward half of the last row equals a single backward step
        x2 = Tensor(enc.table.tensor.data[6:7])
        b2 = enc.bwd.step(enc.bwd.zero_state(1), x2)
        assert np.allclose(out.H.data[2, 5:], b2.data[0])

    def test_pooling_is_dimensionwise_max(self):
        enc = make_encoder(seed=3)
        out = enc.encode([4, 5, 6, 7, 8])
        assert np.array_equal(out.v_c.data[0], out.H.data.max(axis=0))

    def test_single_token_pooling_trivial(self):
        enc = make_encoder()
        out = enc.encode([9])
        assert np.array_equal(out.v_c.data[0], out.H.data[0])

    def test_truncation(self):
        enc = make_encoder(max_len=3)
        out = enc.encode([4, 5, 6, 7, 8, 9])
        assert out.H.shape[0] == 3

    def test_empty_context_rejected(self):
        with pytest.raises(ShapeError):
            make_encoder().encode([])

    def test_gradients_reach_embedding_table(self):
        enc = make_encoder(seed=5)
        from glossgen.autodiff import Tape, backward
        with Tape() as tape:
            out = enc.encode([4, 5])
            backward(tape, sum_all(mul(out.v_c, out.v_c)))
        assert np.any(enc.table.tensor.grad != 0)


class TestSenseAttention:
    def test_hand_oracle(self):
        # d_w=2, d=2, single-row query against two orthogonal keys
        attn = SenseAttention(np.random.default_rng(0), d_w=2, d_ctx=2, d_attn=2)
        attn._params["attn.W_Q"].data[...] = np.eye(2)
        attn._params["attn.W_K"].data[...] = np.eye(2)
        attn._params["attn.W_V"].data[...] = np.eye(2)
        attn._params["attn.W_O"].data[...] = np.eye(2)
        v_star = Tensor([[1.0, 0.0]])
        H = Tensor([[1.0, 0.0], [0.0, 1.0]])
        a_star, weights = attn.attend(v_star, H)
        s = 1.0 / np.sqrt(2.0)
        expected_w = np.exp([s, 0.0]) / np.exp([s, 0.0]).sum()
        assert np.allclose(weights.data[0], expected_w, atol=1e-4)
        assert np.allclose(weights.data[0], [0.6698, 0.3302], atol=1e-4)
        assert np.allclose(a_star.data[0], [0.6698, 0.3302], atol=1e-4)

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(1)
        attn = SenseAttention(rng, d_w=4, d_ctx=6, d_attn=5)
        for m in (1, 2, 7):
            H = Tensor(rng.normal(size=(m, 6)) * 10)
            _, w = attn.attend(Tensor(rng.normal(size=(1, 4))), H)
            assert np.all(w.data >= 0)
            assert abs(w.data.sum() - 1.0) <= 1e-9

    def test_identical_keys_give_uniform_weights(self):
        rng = np.random.default_rng(2)
        attn = SenseAttention(rng, d_w=4, d_ctx=6, d_attn=5)
        row = rng.normal(size=6)
        H = Tensor(np.tile(row, (4, 1)))
        _, w = attn.attend(Tensor(rng.normal(size=(1, 4))), H)
        assert np.allclose(w.data, 0.25)

    def test_single_row_ignores_query(self):
        rng = np.random.default_rng(3)
        attn = SenseAttention(rng, d_w=4, d_ctx=6, d_attn=5)
        H = Tensor(rng.normal(size=(1, 6)))
        a1, _ = attn.attend(Tensor(rng.normal(size=(1, 4))), H)
        a2, _ = attn.attend(Tensor(rng.normal(size=(1, 4))), H)
        assert np.allclose(a1.data, a2.data)

    def test_score_shift_invariance(self):
        # adding a constant to all scores leaves softmax unchanged; emulate by
        # shifting K so every inner product moves by the same amount
        rng = np.random.default_rng(4)
        x = rng.normal(size=(1, 5))
        shifted = x + 3.0
        from glossgen.autodiff import softmax as sm
        assert np.allclose(sm(Tensor(x), axis=1).data, sm(Tensor(shifted), axis=1).data)

    def test_output_shape(self):
        rng = np.random.default_rng(5)
        attn = SenseAttention(rng, d_w=7, d_ctx=4, d_attn=3)
        a, w = attn.attend(Tensor(rng.normal(size=(1, 7))), Tensor(rng.normal(size=(6, 4))))
        assert a.shape == (1, 7) and w.shape == (1, 6)

    def test_end_to_end_gradient(self):
        # encoder -> attention composite, checked at loose model tolerance
        rng = np.random.default_rng(6)
        table = EmbeddingTable(rng.uniform(-0.1, 0.1, size=(9, 4)), trainable=True)
        enc = ContextEncoder(rng, table, d_h=3)
        attn = SenseAttention(rng, d_w=4, d_ctx=6, d_attn=4)
        v_star = Tensor(rng.normal(size=(1, 4)), requires_grad=True)
        params = {**enc.params(), **attn.params()}
        point = [v_star] + list(params.values())

        def f(v_star, *rest):
            out = enc.encode([4, 5, 6])
            a_star, _ = attn.attend(v_star, out.H)
            return sum_all(mul(a_star, a_star))

        assert grad_check(f, point, coord_limit=6, seed=1) < 1e-3
