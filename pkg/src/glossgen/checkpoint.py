"""Checkpoints: one .npz per model holding every array plus a JSON header.

The header carries the format version, the full resolved config, the
vocabulary itself, and its fingerprint, so a checkpoint is self-contained and
guards against evaluating under a different vocabulary. Round trips are
bit-exact (float64 arrays are stored losslessly).
"""

from __future__ import annotations

import json

import numpy as np

from .config import Config, config_from_dict, config_to_dict
from .data import Vocabulary
from .embeddings import ContextualProvider

FORMAT_VERSION = 1
META_KEY = "__meta__"


class CheckpointError(Exception):
    pass


def save_checkpoint(path, model, cfg: Config, extra_meta: dict | None = None) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "config": config_to_dict(cfg),
        "vocab_tokens": model.vocab.id_to_token,
        "vocab_fingerprint": model.vocab.fingerprint(),
        "seed": model.seed,
        "contextual_kind": model.contextual.kind,
        "contextual_seed": model.contextual.seed,
    }
    if model.char_encoder is not None:
        meta["char_vocab"] = model.char_encoder.char_vocab.chars
    meta.update(extra_meta or {})
    arrays = model.state_arrays()
    with open(path, "wb") as fh:
        np.savez(fh, **{META_KEY: np.array(json.dumps(meta, sort_keys=True))}, **arrays)


def read_meta(path) -> dict:
    with np.load(path, allow_pickle=False) as data:
        if META_KEY not in data:
            raise CheckpointError(f"{path}: not a checkpoint (no header)")
        return json.loads(str(data[META_KEY]))


def load_checkpoint(path, contextual: ContextualProvider | None = None):
    """Rebuild the model from a checkpoint. Returns (model, cfg, meta).

    A file-backed contextual provider is not stored in the checkpoint and
    must be supplied by the caller when the run used one.
    """
    from .models import DefinitionModel

    with np.load(path, allow_pickle=False) as data:
        if META_KEY not in data:
            raise CheckpointError(f"{path}: not a checkpoint (no header)")
        meta = json.loads(str(data[META_KEY]))
        arrays = {k: data[k] for k in data.files if k != META_KEY}
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {meta.get('format_version')} unsupported")
    cfg = config_from_dict(meta["config"])
    tokens = meta["vocab_tokens"]
    vocab = Vocabulary(tokens[4:])
    if vocab.fingerprint() != meta["vocab_fingerprint"]:
        raise CheckpointError(f"{path}: vocabulary fingerprint mismatch")
    if contextual is None and meta["contextual_kind"] == "deterministic-test":
        contextual = ContextualProvider("deterministic-test", cfg.model.d_e,
                                        seed=meta["contextual_seed"])
    if contextual is None:
        raise CheckpointError(
            f"{path}: run used a {meta['contextual_kind']} contextual provider; "
            "supply it to load")
    model = DefinitionModel(cfg.model, vocab, seed=meta["seed"], contextual=contextual)
    model.load_state_arrays(arrays)
    return model, cfg, meta


def save_pretrained(path, model, extra_meta: dict | None = None) -> None:
    """Store only the decoder-side parameters for later warm starts."""
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": "pretrained-decoder",
        "vocab_fingerprint": model.vocab.fingerprint(),
        "d_s": model.cfg.d_s,
        "input_dim": model.input_dim,
    }
    meta.update(extra_meta or {})
    arrays = {name: t.data for name, t in model.pretrainable_params().items()}
    with open(path, "wb") as fh:
        np.savez(fh, **{META_KEY: np.array(json.dumps(meta, sort_keys=True))}, **arrays)


def load_pretrained(path, model) -> list[str]:
    """Copy pretrained decoder arrays into a model; returns the copied names."""
    with np.load(path, allow_pickle=False) as data:
        if META_KEY not in data:
            raise CheckpointError(f"{path}: not a checkpoint (no header)")
        meta = json.loads(str(data[META_KEY]))
        arrays = {k: data[k] for k in data.files if k != META_KEY}
    if meta.get("kind") != "pretrained-decoder":
        raise CheckpointError(f"{path}: not a pretrained-decoder file")
    if meta["vocab_fingerprint"] != model.vocab.fingerprint():
        raise CheckpointError(f"{path}: vocabulary fingerprint mismatch")
    targets = model.pretrainable_params()
    if set(arrays) != set(targets):
        raise CheckpointError(
            f"{path}: parameter names do not match the model's decoder branch")
    for name, value in arrays.items():
        if value.shape != targets[name].data.shape:
            raise CheckpointError(
                f"{path}: array {name!r} has shape {value.shape}, model expects "
                f"{targets[name].data.shape}")
    for name, value in arrays.items():
        targets[name].data[...] = value
    return sorted(arrays)
