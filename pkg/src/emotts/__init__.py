"""Desk-scale emotional text-to-speech.

A Tacotron-style sequence-to-sequence synthesizer with emotion-embedding
injection, monotonic attention, semi-teacher-forced training, context-vector
feedback into the attention RNN, and a residual bi-GRU in the CBHG encoder.
Everything runs on a CPU: a tiny reverse-mode autodiff core, numpy DSP, and
Griffin-Lim phase reconstruction.
"""

__version__ = "0.1.0"
