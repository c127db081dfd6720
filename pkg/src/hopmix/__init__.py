"""Hopfield networks, invertible MLP token mixers and a small Mixer trainer on numpy."""

__version__ = "0.1.0"
