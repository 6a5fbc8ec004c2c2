"""Training loop: Adam on shuffled minibatches, patience-based model selection.

Every run is deterministic given (seed, corpus, config): epoch shuffles come
from generators seeded with (seed, epoch), so identical settings produce
byte-identical step logs. Validation perplexity pools the teacher-forced NLL
over every task the model scores, weighted by token counts, and the best
checkpoint is whichever epoch minimizes it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (AdamState, NumericalError, Tape, adam_step, backward,
                       clip_global_norm, zero_grads)
from .checkpoint import save_checkpoint, save_pretrained
from .config import Config
from .data import DictionaryEntry, find_target_occurrence, tokenize


class TrainingError(Exception):
    pass


@dataclass
class TrainResult:
    best_epoch: int          # 1-based; 0 when no epoch ran
    best_ppl: float
    epochs_run: int
    history: list = field(default_factory=list)   # one dict per epoch
    checkpoint_path: str | None = None


def _batches(items: list, batch_size: int, rng: np.random.Generator | None):
    order = np.arange(len(items))
    if rng is not None:
        rng.shuffle(order)
    for i in range(0, len(order), batch_size):
        yield [items[j] for j in order[i:i + batch_size]]


def validation_ppl(model, entries, batch_size: int = 16) -> float:
    """exp of the token-weighted NLL pooled over all tasks the model scores."""
    entries = list(entries)
    if not entries:
        raise TrainingError("validation: empty corpus")
    total, count = 0.0, 0
    for i in range(0, len(entries), batch_size):
        out = model.forward_batch(entries[i:i + batch_size])
        total += out.def_total_nll
        count += out.def_tokens
        if out.usg_total_nll is not None:
            total += out.usg_total_nll
            count += out.usg_tokens
    return float(np.exp(total / count))


class _Logger:
    def __init__(self, path):
        self._fh = open(path, "w", encoding="utf-8") if path else None

    def write(self, record: dict) -> None:
        if self._fh is not None:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def train(model, cfg: Config, train_entries, valid_entries,
          checkpoint_path=None, log_path=None, stop_ppl: float | None = None,
          extra_meta: dict | None = None) -> TrainResult:
    """Fit the model; keeps the checkpoint of the best validation epoch.

    Stops after ``cfg.train.max_epochs`` epochs, once more than
    ``cfg.train.patience`` consecutive epochs fail to improve validation
    perplexity, or as soon as it drops to ``stop_ppl`` when one is given.
    A non-finite loss aborts with the epoch, step, and batch entry ids.
    """
    train_entries = list(train_entries)
    valid_entries = list(valid_entries)
    if not train_entries:
        raise TrainingError("train: empty training corpus")
    t = cfg.train
    params = model.params()
    adam = AdamState(lr=t.lr, beta1=t.beta1, beta2=t.beta2, eps=t.eps)
    log = _Logger(log_path)
    best_ppl, best_epoch, since_improve = float("inf"), 0, 0
    history: list[dict] = []
    step = 0
    try:
        for epoch in range(1, t.max_epochs + 1):
            rng = np.random.default_rng((t.seed, epoch))
            epoch_loss, epoch_batches = 0.0, 0
            for batch in _batches(train_entries, t.batch_size, rng):
                step += 1
                zero_grads(params)
                try:
                    with Tape() as tape:
                        out = model.forward_batch(batch)
                        backward(tape, out.loss)
                except NumericalError as exc:
                    ids = ", ".join(e.entry_id for e in batch)
                    raise TrainingError(
                        f"non-finite values at epoch {epoch} step {step} "
                        f"(batch entries: {ids}): {exc}") from exc
                clip_global_norm(params, t.clip_norm)
                adam_step(params, adam)
                loss_val = float(out.loss.data)
                epoch_loss += loss_val
                epoch_batches += 1
                log.write({"epoch": epoch, "step": step, "loss": loss_val})
            ppl = validation_ppl(model, valid_entries) if valid_entries else float("nan")
            record = {"epoch": epoch, "mean_train_loss": epoch_loss / epoch_batches,
                      "valid_ppl": ppl}
            history.append(record)
            log.write(record)
            improved = not valid_entries or ppl < best_ppl
            if improved:
                best_ppl, best_epoch, since_improve = ppl, epoch, 0
                if checkpoint_path is not None:
                    meta = {"best_epoch": epoch, "valid_ppl": ppl}
                    meta.update(extra_meta or {})
                    save_checkpoint(checkpoint_path, model, cfg, extra_meta=meta)
            else:
                since_improve += 1
                if since_improve > t.patience:
                    break
            if stop_ppl is not None and ppl <= stop_ppl:
                break
        return TrainResult(best_epoch=best_epoch, best_ppl=best_ppl,
                           epochs_run=len(history), history=history,
                           checkpoint_path=checkpoint_path)
    finally:
        log.close()


def load_lm_sentences(path, vocab, min_tokens: int = 1) -> list[list[int]]:
    """Read one sentence per line, tokenize, encode; skip blank lines."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            toks = tokenize(line)
            if len(toks) >= min_tokens:
                out.append(vocab.encode(toks))
    if not out:
        raise TrainingError(f"{path}: no usable sentences")
    return out


def pretrain_decoder(model, cfg: Config, sentences, out_path=None,
                     log_path=None) -> list[dict]:
    """Fit the decoder branch as a plain language model on raw sentences.

    Runs a fixed ``cfg.train.pretrain_epochs`` epochs (zero is valid and just
    stores the initialization). Only the decoder-side parameters move; the
    encoder, attention, and all tables stay at their initial values.
    """
    sentences = list(sentences)
    if not sentences:
        raise TrainingError("pretrain: empty sentence corpus")
    t = cfg.train
    params = model.pretrainable_params()
    adam = AdamState(lr=t.lr, beta1=t.beta1, beta2=t.beta2, eps=t.eps)
    log = _Logger(log_path)
    history: list[dict] = []
    step = 0
    try:
        for epoch in range(1, t.pretrain_epochs + 1):
            rng = np.random.default_rng((t.seed, epoch))
            epoch_loss, epoch_batches = 0.0, 0
            for batch in _batches(sentences, t.batch_size, rng):
                step += 1
                zero_grads(params)
                try:
                    with Tape() as tape:
                        mean, _, _ = model.lm_loss(batch)
                        backward(tape, mean)
                except NumericalError as exc:
                    raise TrainingError(
                        f"non-finite values at pretrain epoch {epoch} "
                        f"step {step}: {exc}") from exc
                clip_global_norm(params, t.clip_norm)
                adam_step(params, adam)
                loss_val = float(mean.data)
                epoch_loss += loss_val
                epoch_batches += 1
                log.write({"epoch": epoch, "step": step, "loss": loss_val})
            record = {"epoch": epoch, "mean_train_loss": epoch_loss / epoch_batches}
            history.append(record)
            log.write(record)
        if out_path is not None:
            save_pretrained(out_path, model,
                            extra_meta={"pretrain_epochs": t.pretrain_epochs})
        return history
    finally:
        log.close()


def make_query_entry(word: str, context: str, entry_id: str = "query") -> DictionaryEntry:
    """Build a one-off entry for generation from a raw word and context line."""
    word = word.strip().lower()
    if not word:
        raise TrainingError("query: empty word")
    ctx_tokens = tokenize(context)
    if not ctx_tokens:
        raise TrainingError("query: empty context")
    idx = find_target_occurrence(ctx_tokens, word)
    return DictionaryEntry(entry_id=entry_id, word=word, pos="unk",
                           sense_id="query", definition=["<unk>"],
                           contexts=[ctx_tokens], context_target_indices=[idx])
