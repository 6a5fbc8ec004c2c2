"""Context-dependent definition and usage-example generation.

A numpy implementation of a seq2seq definition generator: GRU encoders over
the word's local context, a sense-attention readout, and a gated two-layer
GRU decoder, all differentiated by the small reverse-mode core in
``glossgen.autodiff``.
"""

__version__ = "0.1.0"
