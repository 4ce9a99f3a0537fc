"""Visually grounded multilingual speech embeddings.

Trains image, English-speech, and Hindi-speech encoders into one shared
space with a margin ranking objective, evaluates cross-modal retrieval
(recall@k over all six query/target directions), and exports frame-level
speech-to-speech alignment matrices.
"""

__version__ = "0.1.0"
