"""Compression-aware training by dual tomographic neuron pruning."""

__version__ = "0.1.0"
