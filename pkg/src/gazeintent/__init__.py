"""Gaze-intent pipeline for magnified-screen reading: preprocessing,
dual-stream sequence model, mouse-velocity pretraining, LOSO evaluation
and streaming gaze-only inference."""

__version__ = "0.1.0"
