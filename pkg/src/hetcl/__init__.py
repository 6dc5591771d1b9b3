"""Continual learning on heterogeneous graphs with diversity-aware replay,
teacher distillation and fast adaptation."""

__version__ = "0.1.0"
