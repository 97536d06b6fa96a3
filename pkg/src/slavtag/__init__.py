"""Multilingual named-entity tagger with joint language classification.

Pipeline: raw documents -> word-level IOB labels -> WordPiece subtokens ->
frozen layered embeddings -> trainable weighted aggregation -> BiLSTM ->
multi-head self-attention -> linear+tanh emissions -> linear-chain CRF
(Viterbi / exact n-best), with a pooled language-classification head
trained jointly.
"""

__version__ = "0.1.0"
