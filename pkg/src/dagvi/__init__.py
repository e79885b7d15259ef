"""Variational inference over causal graph structures with an autoregressive posterior."""

__version__ = "0.1.0"
