"""Gated two-layer GRU decoder over the definition (or usage) vocabulary.

Each step consumes a gated concatenation of step-constant conditioning
features (sense vector, char features, contextual vector) and the previous
token's embedding, and emits a distribution over the output vocabulary.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeError, Tensor, add, concat, cross_entropy_from_logits, matmul, mul, scale, sigmoid, softmax, sum_all
from .embeddings import glorot
from .encoder import GruCell

S0_VARIANTS = ("zeros", "word", "context", "both")


class DecoderEmbedding:
    """Previous-token embeddings: a frozen pretrained table whose four special
    rows (pad/unk/bos/eos) are replaced by a small trainable table."""

    def __init__(self, frozen_matrix: np.ndarray, rng: np.random.Generator,
                 prefix: str = "emb"):
        self.frozen = Tensor(frozen_matrix)  # no grad, never updated
        self.dim = frozen_matrix.shape[1]
        self.prefix = prefix
        self.specials = Tensor(rng.uniform(-0.1, 0.1, size=(4, self.dim)),
                               requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        return {f"{self.prefix}.specials": self.specials}

    def embed(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.intp)
        is_special = ids < 4
        from .autodiff import embedding_lookup
        base = embedding_lookup(self.frozen, ids)
        spec = embedding_lookup(self.specials, np.minimum(ids, 3))
        keep = Tensor(np.repeat((~is_special).astype(float)[:, None], self.dim, axis=1))
        swap = Tensor(np.repeat(is_special.astype(float)[:, None], self.dim, axis=1))
        return add(mul(base, keep), mul(spec, swap))


class InitStateProjector:
    """Produce the decoder's initial hidden states from [v*; v_c].

    Variants: "both" projects the full concatenation; "word"/"context" zero
    the other half before projecting; "zeros" allocates no parameters and
    starts every layer at zero. Only layer 1 is initialized; upper layers
    always start at zero.
    """

    def __init__(self, rng: np.random.Generator, d_w: int, d_ctx: int, d_s: int,
                 n_layers: int, variant: str, prefix: str = "init"):
        if variant not in S0_VARIANTS:
            raise ShapeError(f"unknown s0 variant {variant!r}")
        self.d_w, self.d_ctx, self.d_s = d_w, d_ctx, d_s
        self.n_layers = n_layers
        self.variant = variant
        self.prefix = prefix
        self._params: dict[str, Tensor] = {}
        if variant != "zeros":
            self._params[f"{prefix}.W_s"] = Tensor(
                glorot(rng, (d_w + d_ctx, d_s)), requires_grad=True)
            self._params[f"{prefix}.b_s"] = Tensor(np.zeros(d_s), requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        return dict(self._params)

    def init_state(self, v_star: Tensor | None, v_c: Tensor | None,
                   batch: int = 1) -> list[Tensor]:
        zero = Tensor(np.zeros((batch, self.d_s)))
        if self.variant == "zeros":
            return [zero] + [Tensor(np.zeros((batch, self.d_s)))
                             for _ in range(self.n_layers - 1)]
        if self.variant in ("word", "both") and (v_star is None or v_star.shape != (batch, self.d_w)):
            raise ShapeError(f"init_state: v* must be ({batch}, {self.d_w})")
        if self.variant in ("context", "both") and (v_c is None or v_c.shape != (batch, self.d_ctx)):
            raise ShapeError(f"init_state: v_c must be ({batch}, {self.d_ctx})")
        if self.variant == "word":
            v_c = Tensor(np.zeros((batch, self.d_ctx)))
        elif self.variant == "context":
            v_star = Tensor(np.zeros((batch, self.d_w)))
        joint = concat([v_star, v_c], axis=1)
        s0 = add(matmul(joint, self._params[f"{self.prefix}.W_s"]),
                 self._params[f"{self.prefix}.b_s"])
        return [s0] + [Tensor(np.zeros((batch, self.d_s)))
                       for _ in range(self.n_layers - 1)]


class GatedInputBuilder:
    """Assemble x_t = g * [a*; y_prev; c*; e*] with g = sigma(u W_g).

    Inactive components (char/contextual switched off) must not be supplied;
    with the gate switched off, x_t is the raw concatenation and no W_g
    parameter exists.
    """

    def __init__(self, rng: np.random.Generator, d_w: int, char_dim: int,
                 contextual_dim: int, gate_on: bool, prefix: str):
        self.d_w = d_w
        self.char_dim = char_dim          # 0 when the char feature is off
        self.contextual_dim = contextual_dim  # 0 when the contextual feature is off
        self.gate_on = gate_on
        self.prefix = prefix
        self.dim = 2 * d_w + char_dim + contextual_dim
        self._params: dict[str, Tensor] = {}
        if gate_on:
            self._params[f"{prefix}.W_g"] = Tensor(glorot(rng, (self.dim, self.dim)),
                                                   requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        return dict(self._params)

    def build(self, a_star: Tensor, y_prev: Tensor, c_star: Tensor | None = None,
              e_star: Tensor | None = None) -> Tensor:
        batch = y_prev.shape[0]
        if a_star.shape != (batch, self.d_w):
            raise ShapeError(f"gated input: a* must be ({batch}, {self.d_w}), got {a_star.shape}")
        parts = [a_star, y_prev]
        if self.char_dim:
            if c_star is None:
                raise ShapeError("gated input: char feature active but c* missing")
            parts.append(c_star)
        elif c_star is not None:
            raise ShapeError("gated input: c* supplied while the char feature is off")
        if self.contextual_dim:
            if e_star is None:
                raise ShapeError("gated input: contextual feature active but e* missing")
            parts.append(e_star)
        elif e_star is not None:
            raise ShapeError("gated input: e* supplied while the contextual feature is off")
        u = concat(parts, axis=1)
        if u.shape[1] != self.dim:
            raise ShapeError(f"gated input: assembled dim {u.shape[1]}, expected {self.dim}")
        if not self.gate_on:
            return u
        g = sigmoid(matmul(u, self._params[f"{self.prefix}.W_g"]))
        return mul(g, u)


class DecoderStack:
    """Stacked GRU layers plus the output projection to vocabulary logits."""

    def __init__(self, rng: np.random.Generator, input_dim: int, d_s: int,
                 vocab_size: int, n_layers: int = 2, prefix: str = "dec"):
        self.input_dim = input_dim
        self.d_s = d_s
        self.vocab_size = vocab_size
        self.n_layers = n_layers
        self.prefix = prefix
        self.cells = [GruCell(rng, input_dim if i == 0 else d_s, d_s,
                              f"{prefix}.gru{i}") for i in range(n_layers)]
        self._params = {
            f"{prefix}.W_d": Tensor(glorot(rng, (d_s, vocab_size)), requires_grad=True),
            f"{prefix}.b_d": Tensor(np.zeros(vocab_size), requires_grad=True),
        }

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for cell in self.cells:
            out.update(cell.params())
        out.update(self._params)
        return out

    def step(self, states: list[Tensor], x: Tensor) -> tuple[list[Tensor], Tensor]:
        """One decode step; returns (new states, logits (batch, V))."""
        if len(states) != self.n_layers:
            raise ShapeError(f"{self.prefix}: expected {self.n_layers} states, got {len(states)}")
        new_states = []
        inp = x
        for cell, h in zip(self.cells, states):
            inp = cell.step(h, inp)
            new_states.append(inp)
        logits = add(matmul(inp, self._params[f"{self.prefix}.W_d"]),
                     self._params[f"{self.prefix}.b_d"])
        return new_states, logits

    def decode_step(self, states: list[Tensor], x: Tensor) -> tuple[list[Tensor], Tensor]:
        """Contract form of step: returns the softmax distribution."""
        new_states, logits = self.step(states, x)
        return new_states, softmax(logits, axis=1)

    def hidden_step(self, states: list[Tensor], x: Tensor) -> list[Tensor]:
        """Advance the recurrent layers without projecting to logits."""
        if len(states) != self.n_layers:
            raise ShapeError(f"{self.prefix}: expected {self.n_layers} states, got {len(states)}")
        new_states = []
        inp = x
        for cell, h in zip(self.cells, states):
            inp = cell.step(h, inp)
            new_states.append(inp)
        return new_states


def sequence_log_prob(step_fn, init_state, target_ids, bos_id: int, eos_id: int) -> Tensor:
    """Teacher-forced total log probability of target + end marker.

    ``step_fn(state, prev_token_id) -> (state, logits (1, V))``. The start
    marker is fed but never predicted; the end marker is predicted after the
    last target token, so a target of length T scores T+1 positions.
    """
    target_ids = list(target_ids)
    if not target_ids:
        raise ShapeError("sequence_log_prob: empty target")
    inputs = [bos_id] + target_ids
    golds = target_ids + [eos_id]
    state = init_state
    ces = []
    for prev, gold in zip(inputs, golds):
        state, logits = step_fn(state, prev)
        ces.append(cross_entropy_from_logits(logits, [gold]))
    total_nll = sum_all(ces[0] if len(ces) == 1 else concat(ces, axis=0))
    return scale(total_nll, -1.0)


def sample_sequence(step_fn, init_state, bos_id: int, eos_id: int, max_len: int,
                    temperature: float, rng: np.random.Generator) -> list[int]:
    """Autoregressive temperature sampling; exact argmax below tau = 1e-6.

    Stops when the end marker is drawn or max_len tokens are emitted; the end
    marker itself is not returned.
    """
    if temperature <= 0:
        raise ValueError("sample_sequence: temperature must be positive")
    if max_len < 1:
        raise ValueError("sample_sequence: max_len must be at least 1")
    state = init_state
    prev = bos_id
    out: list[int] = []
    for _ in range(max_len):
        state, logits = step_fn(state, prev)
        z = logits.data[0]
        if temperature < 1e-6:
            tok = int(np.argmax(z))
        else:
            scaled = (z - z.max()) / temperature
            probs = np.exp(scaled)
            probs /= probs.sum()
            tok = int(rng.choice(len(probs), p=probs))
        if tok == eos_id:
            break
        out.append(tok)
        prev = tok
    return out
