"""Cooperative neural retrieval: RL query reformulation with KNRM reranking."""

__version__ = "1.0.0"

# Bumped whenever an on-disk layout (index, checkpoints, history) changes.
FORMAT_VERSION = 1
