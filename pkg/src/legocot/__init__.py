"""LEGO state tracking with a one-layer NoPE transformer: data, model, training, diagnostics."""

__version__ = "0.1.0"
