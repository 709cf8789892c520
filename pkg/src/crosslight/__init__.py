"""Replay-attack simulation and detection for a model-based adaptive traffic light."""

__version__ = "0.1.0"
