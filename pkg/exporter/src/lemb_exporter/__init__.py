"""Export frozen transformer hidden states to LEMB embedding files.

Consumes the tagger's prepared sentence cache (sentences.jsonl +
meta.json) and writes one LEMB file per sentence whose token list matches
the cached subtokens exactly, padding positions zero-filled, plus a flat
key=value manifest.
"""

__version__ = "0.1.0"
