"""Hierarchical multi-scale kernel attention: model, training and analysis lab."""

__version__ = "0.1.0"
