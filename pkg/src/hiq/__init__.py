"""Hierarchically quantized embedding hash codes."""
