"""Model assembly: wire embeddings, encoder, attention, and decoders into the
four trainable variants.

Kinds: "single" (definition only), "parallel" (independent definition and
usage decoders over shared conditioning), "hier-du" (definition decoder at
the bottom, usage decoder stacked on its re-run states), "hier-ud" (mirror).
All variants share the conditioning stack: encoder, attention, char encoder,
contextual provider, both embedding tables, and the initial-state projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax as np_softmax

from .autodiff import ShapeError, Tensor, add, concat, cross_entropy_from_logits, embedding_lookup, matmul, mul, scale, sum_all
from .config import ModelConfig
from .data import Vocabulary
from .decoder import DecoderEmbedding, DecoderStack, GatedInputBuilder, InitStateProjector, sample_sequence
from .embeddings import CHAR_EMB_DIM, CHAR_FEATURE_DIM, CONV_COUNTS, CONV_WIDTHS, HIGHWAY_LAYERS, CharEncoder, ContextualProvider, EmbeddingTable, glorot
from .encoder import ContextEncoder, SenseAttention

MULTI_KINDS = ("parallel", "hier-du", "hier-ud")


def _gru_param_count(input_dim: int, hidden_dim: int) -> int:
    return 3 * (input_dim * hidden_dim + hidden_dim * hidden_dim + hidden_dim)


def gated_input_dim(cfg: ModelConfig) -> int:
    return (2 * cfg.d_w
            + (CHAR_FEATURE_DIM if cfg.char_on else 0)
            + (cfg.d_e if cfg.contextual_on else 0))


def expected_param_count(cfg: ModelConfig, vocab_size: int, n_chars: int = 28) -> int:
    """Closed-form trainable parameter count; must match the built model.

    Shared stack: encoder table V*d_w, two encoder GRUs, four attention
    projections, optional char encoder, 4*d_w special embedding rows, and the
    initial-state projection unless the zeros variant. Each decoder adds an
    optional gate (G^2), its GRU layers, and the output projection; the
    hierarchical kinds add the (G+d_s) x G shortcut matrix.
    """
    d_w, d_h, d_s, d = cfg.d_w, cfg.d_h, cfg.d_s, cfg.d_attn
    total = vocab_size * d_w
    total += 2 * _gru_param_count(d_w, d_h)
    total += d_w * d + 2 * (2 * d_h * d) + d * d_w
    if cfg.char_on:
        char = n_chars * CHAR_EMB_DIM
        char += sum(w * CHAR_EMB_DIM * n for w, n in zip(CONV_WIDTHS, CONV_COUNTS))
        char += CHAR_FEATURE_DIM
        char += HIGHWAY_LAYERS * 2 * (CHAR_FEATURE_DIM ** 2 + CHAR_FEATURE_DIM)
        total += char
    total += 4 * d_w
    if cfg.s0_variant != "zeros":
        total += (d_w + 2 * d_h) * d_s + d_s
    g = gated_input_dim(cfg)
    stack = _gru_param_count(g, d_s)
    stack += (cfg.n_decoder_layers - 1) * _gru_param_count(d_s, d_s)
    stack += d_s * vocab_size + vocab_size
    if cfg.gate_on:
        stack += g * g
    total += stack
    if cfg.kind in MULTI_KINDS:
        total += stack
        if cfg.kind in ("hier-du", "hier-ud"):
            total += (g + d_s) * g
    return total


@dataclass
class ForwardOutput:
    loss: Tensor                      # optimization objective (scalar)
    def_loss: Tensor                  # token-mean definition NLL (scalar)
    def_total_nll: float
    def_tokens: int
    usg_loss: Tensor | None = None
    usg_total_nll: float | None = None
    usg_tokens: int | None = None
    def_step_dists: list[np.ndarray] | None = None
    usg_step_dists: list[np.ndarray] | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def def_log_prob(self) -> float:
        return -self.def_total_nll


def multi_task_loss(out: ForwardOutput) -> Tensor:
    """Unweighted sum of the two token-mean task losses."""
    if out.usg_loss is None:
        raise ShapeError("multi_task_loss: output has no usage task")
    return add(out.def_loss, out.usg_loss)


class DefinitionModel:
    """One trainable model of any kind, built deterministically from a seed.

    Construction draws from independent child generators in a fixed order
    (tables, encoder, attention, char, specials, init, definition decoder,
    usage decoder, shortcut), so the shared layers and the definition decoder
    are bit-identical across kinds at equal seeds.
    """

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, seed: int,
                 pretrained_matrix: np.ndarray | None = None,
                 contextual: ContextualProvider | None = None):
        self.cfg = cfg
        self.vocab = vocab
        self.seed = seed
        v = len(vocab)
        kids = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(10)]

        if pretrained_matrix is not None:
            if pretrained_matrix.shape != (v, cfg.d_w):
                raise ShapeError(
                    f"pretrained matrix {pretrained_matrix.shape} does not fit vocab "
                    f"{v} x d_w {cfg.d_w}")
            frozen = np.array(pretrained_matrix, dtype=float)
            enc_matrix = frozen.copy()
        else:
            frozen = kids[0].uniform(-0.1, 0.1, size=(v, cfg.d_w))
            frozen[vocab.pad_id] = 0.0
            enc_matrix = kids[1].uniform(-0.1, 0.1, size=(v, cfg.d_w))
            enc_matrix[vocab.pad_id] = 0.0

        self.encoder = ContextEncoder(kids[2], EmbeddingTable(enc_matrix, trainable=True),
                                      cfg.d_h, max_len=cfg.max_context_len)
        self.attention = SenseAttention(kids[3], cfg.d_w, 2 * cfg.d_h, cfg.d_attn)
        self.char_encoder = CharEncoder(kids[4]) if cfg.char_on else None
        self.embedding = DecoderEmbedding(frozen, kids[5])
        self.init_proj = InitStateProjector(kids[6], cfg.d_w, 2 * cfg.d_h, cfg.d_s,
                                            cfg.n_decoder_layers, cfg.s0_variant)
        g = gated_input_dim(cfg)
        self.input_dim = g
        char_dim = CHAR_FEATURE_DIM if cfg.char_on else 0
        ctx_dim = cfg.d_e if cfg.contextual_on else 0
        self.def_gate = GatedInputBuilder(kids[7], cfg.d_w, char_dim, ctx_dim,
                                          cfg.gate_on, "def.gate")
        self.def_stack = DecoderStack(kids[7], g, cfg.d_s, v,
                                      cfg.n_decoder_layers, "def")
        self.usg_gate = self.usg_stack = self.shortcut = None
        if cfg.kind in MULTI_KINDS:
            self.usg_gate = GatedInputBuilder(kids[8], cfg.d_w, char_dim, ctx_dim,
                                              cfg.gate_on, "usg.gate")
            self.usg_stack = DecoderStack(kids[8], g, cfg.d_s, v,
                                          cfg.n_decoder_layers, "usg")
            if cfg.kind in ("hier-du", "hier-ud"):
                self.shortcut = Tensor(glorot(kids[9], (g + cfg.d_s, g)),
                                       requires_grad=True)
        self.contextual = contextual or ContextualProvider(
            "deterministic-test", cfg.d_e, seed=seed)
        if self.contextual.dim != cfg.d_e:
            raise ShapeError(
                f"contextual provider dim {self.contextual.dim} != model d_e {cfg.d_e}")

    # -- parameters ---------------------------------------------------------

    def params(self) -> dict[str, Tensor]:
        p: dict[str, Tensor] = {}
        p.update(self.encoder.params())
        p.update(self.attention.params())
        if self.char_encoder is not None:
            p.update(self.char_encoder.params())
        p.update(self.embedding.params())
        p.update(self.init_proj.params())
        p.update(self.def_gate.params())
        p.update(self.def_stack.params())
        if self.usg_stack is not None:
            p.update(self.usg_gate.params())
            p.update(self.usg_stack.params())
        if self.shortcut is not None:
            p["hier.W_p"] = self.shortcut
        return p

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Every array needed to reconstruct the model, frozen tables included."""
        out = {name: t.data for name, t in self.params().items()}
        out["emb.frozen"] = self.embedding.frozen.data
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        targets = self.params()
        targets["emb.frozen"] = self.embedding.frozen
        missing = sorted(set(targets) - set(arrays))
        extra = sorted(set(arrays) - set(targets))
        if missing or extra:
            raise ShapeError(
                f"checkpoint mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
        for name, tensor in targets.items():
            if arrays[name].shape != tensor.data.shape:
                raise ShapeError(
                    f"checkpoint array {name!r} has shape {arrays[name].shape}, "
                    f"model expects {tensor.data.shape}")
            tensor.data[...] = arrays[name]

    # -- conditioning -------------------------------------------------------

    def _zero_condition(self, batch: int):
        """Pre-training regime: every conditioning feature is a zero vector
        and all decoder layers start at zero, leaving only y_{t-1} live."""
        a = Tensor(np.zeros((batch, self.cfg.d_w)))
        c = Tensor(np.zeros((batch, CHAR_FEATURE_DIM))) if self.cfg.char_on else None
        e_star = Tensor(np.zeros((batch, self.cfg.d_e))) if self.cfg.contextual_on else None
        s0 = [Tensor(np.zeros((batch, self.cfg.d_s)))
              for _ in range(self.cfg.n_decoder_layers)]
        return a, c, e_star, s0, []

    def _condition(self, entries):
        rows_a, rows_v, rows_vc, rows_c, rows_e = [], [], [], [], []
        warnings = []
        for e in entries:
            if not e.contexts:
                raise ShapeError(f"entry {e.entry_id}: no context sentence")
            if e.word in self.vocab:
                wid = self.vocab.token_to_id[e.word]
            else:
                wid = self.vocab.unk_id
                warnings.append(
                    f"entry {e.entry_id}: word {e.word!r} not in vocabulary, "
                    "using the unknown-token vector")
            v_star = embedding_lookup(self.embedding.frozen, [wid])
            encoded = self.encoder.encode(self.vocab.encode(e.contexts[0]))
            a_star, _ = self.attention.attend(v_star, encoded.H)
            rows_a.append(a_star)
            rows_v.append(v_star)
            rows_vc.append(encoded.v_c)
            if self.char_encoder is not None:
                rows_c.append(self.char_encoder.encode(e.word))
            if self.cfg.contextual_on:
                rows_e.append(Tensor(self.contextual.embed_for_entry(e)[None, :]))

        def cat(rows):
            return rows[0] if len(rows) == 1 else concat(rows, axis=0)

        a = cat(rows_a)
        v_star_b = cat(rows_v)
        v_c_b = cat(rows_vc)
        c = cat(rows_c) if rows_c else None
        e_star = cat(rows_e) if rows_e else None
        s0 = self.init_proj.init_state(v_star_b, v_c_b, batch=len(entries))
        return a, c, e_star, s0, warnings

    # -- teacher-forced losses ----------------------------------------------

    def _teacher_arrays(self, seqs):
        pad, bos, eos = self.vocab.pad_id, self.vocab.bos_id, self.vocab.eos_id
        b = len(seqs)
        t_max = max(len(s) for s in seqs) + 1
        inputs = np.full((b, t_max), pad, dtype=np.intp)
        golds = np.full((b, t_max), pad, dtype=np.intp)
        mask = np.zeros((b, t_max))
        for i, s in enumerate(seqs):
            n = len(s) + 1
            inputs[i, :n] = [bos] + list(s)
            golds[i, :n] = list(s) + [eos]
            mask[i, :n] = 1.0
        return inputs, golds, mask

    def _decode_loss(self, stack, gate, s0, a, c, e_star, seqs, collect=False):
        inputs, golds, mask = self._teacher_arrays(seqs)
        states = s0
        ces, dists = [], []
        for t in range(inputs.shape[1]):
            y = self.embedding.embed(inputs[:, t])
            x = gate.build(a, y, c, e_star)
            states, logits = stack.step(states, x)
            ce = cross_entropy_from_logits(logits, golds[:, t])
            ces.append(mul(ce, Tensor(mask[:, t])))
            if collect:
                dists.append(np_softmax(logits.data, axis=1))
        total = sum_all(ces[0] if len(ces) == 1 else concat(ces, axis=0))
        count = int(mask.sum())
        return scale(total, 1.0 / count), float(total.data), count, dists

    def _hier_upper_loss(self, lower, upper, gate, s0, a, c, e_star, seqs,
                         collect=False):
        """Supervise ``upper`` on ``seqs``; ``lower`` is re-run over the same
        gated inputs and its top state feeds the shortcut projection."""
        inputs, golds, mask = self._teacher_arrays(seqs)
        low_states = s0
        up_states = s0
        ces, dists = [], []
        for t in range(inputs.shape[1]):
            y = self.embedding.embed(inputs[:, t])
            x = gate.build(a, y, c, e_star)
            low_states = lower.hidden_step(low_states, x)
            s_prime = low_states[-1]
            proj = matmul(concat([x, s_prime], axis=1), self.shortcut)
            up_states, logits = upper.step(up_states, proj)
            ce = cross_entropy_from_logits(logits, golds[:, t])
            ces.append(mul(ce, Tensor(mask[:, t])))
            if collect:
                dists.append(np_softmax(logits.data, axis=1))
        total = sum_all(ces[0] if len(ces) == 1 else concat(ces, axis=0))
        count = int(mask.sum())
        return scale(total, 1.0 / count), float(total.data), count, dists

    # -- public forward -----------------------------------------------------

    def forward_batch(self, entries, collect_dists: bool = False,
                      zero_conditioning: bool = False) -> ForwardOutput:
        entries = list(entries)
        if not entries:
            raise ShapeError("forward: empty batch")
        for e in entries:
            if not e.definition:
                raise ShapeError(f"entry {e.entry_id}: missing definition")
        multi = self.cfg.kind in MULTI_KINDS
        if multi:
            for e in entries:
                if not e.usage:
                    raise ShapeError(
                        f"entry {e.entry_id}: model kind {self.cfg.kind} requires usage text")
        if zero_conditioning:
            a, c, e_star, s0, warnings = self._zero_condition(len(entries))
        else:
            a, c, e_star, s0, warnings = self._condition(entries)
        def_seqs = [self.vocab.encode(e.definition) for e in entries]

        if not multi:
            mean, total, count, dists = self._decode_loss(
                self.def_stack, self.def_gate, s0, a, c, e_star, def_seqs,
                collect=collect_dists)
            return ForwardOutput(loss=mean, def_loss=mean, def_total_nll=total,
                                 def_tokens=count,
                                 def_step_dists=dists if collect_dists else None,
                                 warnings=warnings)

        usg_seqs = [self.vocab.encode(e.usage) for e in entries]
        if self.cfg.kind == "parallel":
            d_mean, d_total, d_count, d_dists = self._decode_loss(
                self.def_stack, self.def_gate, s0, a, c, e_star, def_seqs,
                collect=collect_dists)
            u_mean, u_total, u_count, u_dists = self._decode_loss(
                self.usg_stack, self.usg_gate, s0, a, c, e_star, usg_seqs,
                collect=collect_dists)
        elif self.cfg.kind == "hier-du":
            d_mean, d_total, d_count, d_dists = self._decode_loss(
                self.def_stack, self.def_gate, s0, a, c, e_star, def_seqs,
                collect=collect_dists)
            u_mean, u_total, u_count, u_dists = self._hier_upper_loss(
                self.def_stack, self.usg_stack, self.usg_gate, s0, a, c, e_star,
                usg_seqs, collect=collect_dists)
        else:  # hier-ud
            u_mean, u_total, u_count, u_dists = self._decode_loss(
                self.usg_stack, self.usg_gate, s0, a, c, e_star, usg_seqs,
                collect=collect_dists)
            d_mean, d_total, d_count, d_dists = self._hier_upper_loss(
                self.usg_stack, self.def_stack, self.def_gate, s0, a, c, e_star,
                def_seqs, collect=collect_dists)
        return ForwardOutput(loss=add(d_mean, u_mean), def_loss=d_mean,
                             def_total_nll=d_total, def_tokens=d_count,
                             usg_loss=u_mean, usg_total_nll=u_total,
                             usg_tokens=u_count,
                             def_step_dists=d_dists if collect_dists else None,
                             usg_step_dists=u_dists if collect_dists else None,
                             warnings=warnings)

    def forward(self, entry) -> ForwardOutput:
        return self.forward_batch([entry])

    def lm_loss(self, token_seqs):
        """Unconditional language-model loss over raw id sequences.

        Used by decoder pre-training: conditioning features are zero vectors,
        so only the definition decoder, its gate, and the trainable special
        embedding rows receive gradients. Returns (mean loss, total, count).
        """
        seqs = [list(s) for s in token_seqs]
        if not seqs or any(not s for s in seqs):
            raise ShapeError("lm_loss: empty sentence in batch")
        a, c, e_star, s0, _ = self._zero_condition(len(seqs))
        mean, total, count, _ = self._decode_loss(
            self.def_stack, self.def_gate, s0, a, c, e_star, seqs)
        return mean, total, count

    def pretrainable_params(self) -> dict[str, Tensor]:
        """Parameters that receive gradients in the zero-conditioned regime."""
        p: dict[str, Tensor] = {}
        p.update(self.embedding.params())
        p.update(self.def_gate.params())
        p.update(self.def_stack.params())
        return p

    # -- generation ---------------------------------------------------------

    def _make_step_fn(self, task: str, a, c, e_star):
        """Single-entry step closure: (states, prev_id) -> (states, logits)."""
        multi = self.cfg.kind in MULTI_KINDS
        if task == "usage" and not multi:
            raise ShapeError("usage generation requires a multi-task model kind")

        if task == "definition" and self.cfg.kind == "hier-ud":
            lower, upper, gate = self.usg_stack, self.def_stack, self.def_gate
        elif task == "usage" and self.cfg.kind == "hier-du":
            lower, upper, gate = self.def_stack, self.usg_stack, self.usg_gate
        else:
            lower = None
            if task == "definition":
                upper, gate = self.def_stack, self.def_gate
            else:
                upper, gate = self.usg_stack, self.usg_gate

        def step(states, prev_id):
            y = self.embedding.embed([prev_id])
            x = gate.build(a, y, c, e_star)
            if lower is None:
                up_states, logits = upper.step(states[0], x)
                return (up_states,), logits
            low_states = lower.hidden_step(states[0], x)
            proj = matmul(concat([x, low_states[-1]], axis=1), self.shortcut)
            up_states, logits = upper.step(states[1], proj)
            return (low_states, up_states), logits

        coupled = lower is not None
        return step, coupled

    def generate(self, entry, task: str = "definition", temperature: float | None = None,
                 seed: int = 0, max_len: int | None = None):
        """Sample one sequence for the entry; returns (tokens, metadata)."""
        temperature = self.cfg.temperature if temperature is None else temperature
        max_len = self.cfg.max_gen_len if max_len is None else max_len
        a, c, e_star, s0, warnings = self._condition([entry])
        step, coupled = self._make_step_fn(task, a, c, e_star)
        init = (s0, s0) if coupled else (s0,)
        rng = np.random.default_rng(seed)
        ids = sample_sequence(step, init, self.vocab.bos_id, self.vocab.eos_id,
                              max_len, temperature, rng)
        meta = {
            "task": task,
            "unknown_word": entry.word not in self.vocab,
            "context_target_absent": entry.context_target_indices[0] is None,
            "warnings": warnings,
        }
        return self.vocab.decode(ids), meta
