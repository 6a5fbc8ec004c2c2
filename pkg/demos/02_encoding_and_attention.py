"""Context encoding and sense attention for one ambiguous word."""

import numpy as np

from glossgen.autodiff import (AdamState, Tape, adam_step, backward,
                               clip_global_norm, embedding_lookup, zero_grads)
from glossgen.config import ModelConfig
from glossgen.data import load_corpus, build_vocab, tokenize
from glossgen.embeddings import CharEncoder
from glossgen.models import DefinitionModel
from glossgen.cli import asset_path

entries, report = load_corpus(asset_path("mini_corpus.jsonl"))
tokens = []
for e in entries:
    tokens.append(e.word)
    tokens.extend(e.definition)
    for ctx in e.contexts:
        tokens.extend(ctx)
vocab = build_vocab(tokens, k=400)
print(f"corpus: {len(entries)} entries, vocab {len(vocab)} tokens")

cfg = ModelConfig(kind="single", d_w=24, d_h=16, d_s=32, d_attn=24,
                  char_on=False, contextual_on=False)
model = DefinitionModel(cfg, vocab, seed=0)

# character n-gram features exist independently of the corpus
chars = CharEncoder(np.random.default_rng(0))
feat = chars.encode("check")
print(f"char features for 'check': shape {feat.data.shape}")

# the encoder runs a bidirectional recurrence over the context sentence
ctx = tokenize("she went to the bank to deposit a check")
encoded = model.encoder.encode(vocab.encode(ctx))
print(f"encoded {len(ctx)} tokens -> H {encoded.H.data.shape}, "
      f"summary {encoded.v_c.data.shape}")


def show_attention(word, sentence):
    toks = tokenize(sentence)
    wid = vocab.token_to_id.get(word, vocab.unk_id)
    v_star = embedding_lookup(model.embedding.frozen, [wid])
    enc = model.encoder.encode(vocab.encode(toks))
    _, weights = model.attention.attend(v_star, enc.H)
    print(f"\nattention for {word!r} in: {sentence}")
    order = np.argsort(-weights.data.ravel())
    for i in order[:4]:
        print(f"  {weights.data.ravel()[i]:.3f}  {toks[i]}")


# train briefly so the weights reflect the data rather than initialization
senses = {e.sense_id for e in entries if e.word == "check"}
print(f"\n'check' has {len(senses)} senses in the corpus")

state = AdamState(lr=5e-3)
for step in range(150):
    zero_grads(model.params())
    with Tape() as tape:
        out = model.forward_batch(entries[:8])
        backward(tape, out.loss)
    clip_global_norm(model.params(), 5.0)
    adam_step(model.params(), state)
print(f"loss after 150 steps on 8 entries: {float(out.loss.data):.3f}")

show_attention("check", "she paid the bill with a check from her account")
show_attention("check", "please check the engine before the long drive")
