"""Multimodal multi-label classification engine.

Structured records become a numeric feature table, one depth-limited
boosted regression tree per label turns each admission into a set of
activated leaves, and a BiLSTM text encoder attends over the leaf
embeddings to produce fused token representations for per-label
attention classification.
"""

__version__ = "0.1.0"
