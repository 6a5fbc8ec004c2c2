"""Word-, character-, and context-level representations of the target word.

Three sources feed the decoder: a fixed pretrained vector for the word, a
character convolution over its spelling, and a per-occurrence contextual
vector. The first is frozen; the char encoder is trainable; the contextual
vector is always a constant feature.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .autodiff import Tensor, add, concat, conv1d, embedding_lookup, matmul, max_over_axis, mul, one_minus, sigmoid, tanh

CHAR_EMB_DIM = 20
CONV_WIDTHS = (2, 3, 4, 5, 6)
CONV_COUNTS = (10, 30, 40, 40, 40)
CHAR_FEATURE_DIM = sum(CONV_COUNTS)  # 160
HIGHWAY_LAYERS = 2

BOUNDARY_CHAR_ID = 0
UNK_CHAR_ID = 1


class EmbeddingError(Exception):
    pass


def glorot(rng: np.random.Generator, shape) -> np.ndarray:
    fan_in, fan_out = (shape[0], shape[-1]) if len(shape) > 1 else (shape[0], shape[0])
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class EmbeddingTable:
    """(V, d) lookup table; frozen tables are excluded from the param dict."""

    def __init__(self, matrix: np.ndarray, trainable: bool):
        self.tensor = Tensor(matrix, requires_grad=trainable)
        self.trainable = trainable

    @property
    def shape(self):
        return self.tensor.shape

    def lookup(self, ids) -> Tensor:
        return embedding_lookup(self.tensor, ids)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.table": self.tensor} if self.trainable else {}


def load_word_embeddings(path, vocab, seed: int, trainable: bool = False,
                         dim: int | None = None):
    """Read "token v1 .. vd" lines into a table aligned with ``vocab``.

    Tokens absent from the file (and the three non-pad specials) get rows
    drawn uniform(-0.1, 0.1) from ``seed``; the pad row is zero. Returns
    (table, coverage) where coverage is the found fraction of non-special
    vocabulary tokens. A leading "count dim" header line is tolerated.
    """
    vectors: dict[str, np.ndarray] = {}
    file_dim = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if line_no == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                    continue  # header
                except ValueError:
                    pass
            token, values = parts[0], parts[1:]
            if file_dim is None:
                file_dim = len(values)
                if file_dim == 0:
                    raise EmbeddingError(f"{path}:{line_no}: no vector values")
            elif len(values) != file_dim:
                raise EmbeddingError(
                    f"{path}:{line_no}: expected {file_dim} values, got {len(values)}")
            vectors[token] = np.array([float(v) for v in values])
    if file_dim is None:
        raise EmbeddingError(f"{path}: empty embedding file")
    if dim is not None and dim != file_dim:
        raise EmbeddingError(f"{path}: file dimension {file_dim} != configured {dim}")

    rng = np.random.default_rng(seed)
    matrix = np.zeros((len(vocab), file_dim))
    found = 0
    for i, token in enumerate(vocab.id_to_token):
        if token in vectors:
            matrix[i] = vectors[token]
            if i >= 4:
                found += 1
        elif i != vocab.pad_id:
            matrix[i] = rng.uniform(-0.1, 0.1, size=file_dim)
    n_real = len(vocab) - 4
    coverage = found / n_real if n_real else 1.0
    return EmbeddingTable(matrix, trainable=trainable), coverage


def random_word_embeddings(vocab, dim: int, seed: int, trainable: bool = False):
    """Table with every non-pad row uniform(-0.1, 0.1); for runs without a file."""
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    matrix[vocab.pad_id] = 0.0
    return EmbeddingTable(matrix, trainable=trainable)


class CharVocabulary:
    """Fixed character inventory: boundary=0, unknown=1, then the alphabet."""

    def __init__(self, alphabet: str = "abcdefghijklmnopqrstuvwxyz"):
        self.chars = ["\x00", "\x01"] + list(alphabet)
        self.char_to_id = {c: i for i, c in enumerate(self.chars)}

    def __len__(self):
        return len(self.chars)

    def encode(self, word: str, min_len: int) -> list[int]:
        ids = [self.char_to_id.get(c, UNK_CHAR_ID) for c in word]
        while len(ids) < min_len:
            ids.append(BOUNDARY_CHAR_ID)
        return ids


class CharEncoder:
    """Char-CNN word features: widths 2..6, tanh, max-over-time, 2 highway layers.

    Output is a (1, 160) row, deterministic per word given the parameters.
    """

    def __init__(self, rng: np.random.Generator, char_vocab: CharVocabulary | None = None):
        self.char_vocab = char_vocab or CharVocabulary()
        n_chars = len(self.char_vocab)
        p: dict[str, Tensor] = {}
        p["char.table"] = Tensor(rng.uniform(-0.1, 0.1, size=(n_chars, CHAR_EMB_DIM)),
                                 requires_grad=True)
        for w, n in zip(CONV_WIDTHS, CONV_COUNTS):
            p[f"char.conv{w}.kernel"] = Tensor(glorot(rng, (w, CHAR_EMB_DIM, n)),
                                               requires_grad=True)
            p[f"char.conv{w}.bias"] = Tensor(np.zeros(n), requires_grad=True)
        for layer in range(HIGHWAY_LAYERS):
            p[f"char.hw{layer}.W_T"] = Tensor(glorot(rng, (CHAR_FEATURE_DIM, CHAR_FEATURE_DIM)),
                                              requires_grad=True)
            p[f"char.hw{layer}.b_T"] = Tensor(np.zeros(CHAR_FEATURE_DIM), requires_grad=True)
            p[f"char.hw{layer}.W_H"] = Tensor(glorot(rng, (CHAR_FEATURE_DIM, CHAR_FEATURE_DIM)),
                                              requires_grad=True)
            p[f"char.hw{layer}.b_H"] = Tensor(np.zeros(CHAR_FEATURE_DIM), requires_grad=True)
        self._params = p

    def params(self) -> dict[str, Tensor]:
        return dict(self._params)

    def encode(self, word: str) -> Tensor:
        if not word:
            raise EmbeddingError("char encoder: empty word")
        ids = self.char_vocab.encode(word, min_len=max(CONV_WIDTHS))
        p = self._params
        emb = embedding_lookup(p["char.table"], ids)  # (L, 20)
        pieces = []
        for w in CONV_WIDTHS:
            feat = conv1d(emb, p[f"char.conv{w}.kernel"])
            feat = tanh(add(feat, p[f"char.conv{w}.bias"]))
            pieces.append(max_over_axis(feat, axis=0, keepdims=True))  # (1, n_w)
        x = concat(pieces, axis=1)  # (1, 160)
        for layer in range(HIGHWAY_LAYERS):
            t = sigmoid(add(matmul(x, p[f"char.hw{layer}.W_T"]), p[f"char.hw{layer}.b_T"]))
            g = tanh(add(matmul(x, p[f"char.hw{layer}.W_H"]), p[f"char.hw{layer}.b_H"]))
            x = add(mul(t, g), mul(one_minus(t), x))
        return x


class ContextualProvider:
    """Per-occurrence vector for the target word, dimension d_e, constant.

    Two kinds: "deterministic-test" derives a unit vector from a stable hash
    of (target token, previous token, next token); "file-backed" looks up a
    precomputed vector by entry id and fails on absent keys.
    """

    def __init__(self, kind: str, dim: int, seed: int = 0, table: dict | None = None):
        if kind not in ("deterministic-test", "file-backed"):
            raise EmbeddingError(f"unknown contextual provider kind {kind!r}")
        if kind == "file-backed" and table is None:
            raise EmbeddingError("file-backed provider needs a table")
        self.kind = kind
        self.dim = dim
        self.seed = seed
        self.table = table or {}

    def _hash_vector(self, target: str, prev: str, nxt: str) -> np.ndarray:
        key = f"{self.seed}|{target}|{prev}|{nxt}".encode("utf-8")
        digest = hashlib.sha256(key).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = rng.normal(size=self.dim)
        return v / np.linalg.norm(v)

    def embed(self, context: list[str], target_index: int) -> np.ndarray:
        if self.kind != "deterministic-test":
            raise EmbeddingError("positional embedding requires the deterministic kind")
        if not (0 <= target_index < len(context)):
            raise EmbeddingError(
                f"target index {target_index} out of range for context of "
                f"length {len(context)}")
        prev = context[target_index - 1] if target_index > 0 else ""
        nxt = context[target_index + 1] if target_index + 1 < len(context) else ""
        return self._hash_vector(context[target_index], prev, nxt)

    def embed_word_alone(self, word: str) -> np.ndarray:
        """Fallback when the context has no resolved target occurrence."""
        return self._hash_vector(word, "", "")

    def embed_entry_id(self, entry_id: str) -> np.ndarray:
        if self.kind != "file-backed":
            raise EmbeddingError("entry-id lookup requires the file-backed kind")
        if entry_id not in self.table:
            raise EmbeddingError(f"no precomputed contextual vector for entry {entry_id!r}")
        return self.table[entry_id]

    def embed_for_entry(self, entry, context_index: int = 0) -> np.ndarray:
        if self.kind == "file-backed":
            return self.embed_entry_id(entry.entry_id)
        idx = entry.context_target_indices[context_index]
        if idx is None:
            return self.embed_word_alone(entry.word)
        return self.embed(entry.contexts[context_index], idx)


def load_contextual_file(path, dim: int, seed: int = 0) -> ContextualProvider:
    """Text format: one "entry_id v1 .. v_de" record per line, length-checked."""
    table: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) - 1 != dim:
                raise EmbeddingError(
                    f"{path}:{line_no}: expected {dim} values, got {len(parts) - 1}")
            table[parts[0]] = np.array([float(v) for v in parts[1:]])
    return ContextualProvider("file-backed", dim, seed=seed, table=table)
