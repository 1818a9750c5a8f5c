"""Synthetic bridge weigh-in-motion lab: traffic, beam responses, and a
causal temporal-convolution overload classifier."""

__version__ = "0.1.0"
