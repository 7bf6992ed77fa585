"""Desk-scale end-to-end speech recognition: CTC acoustic model, KN n-gram LM, fused decoding, WER scoring."""

__version__ = "0.1.0"
