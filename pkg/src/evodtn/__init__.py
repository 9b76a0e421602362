"""Delay-tolerant network simulation and evolution of router update logic."""

__version__ = "0.1.0"
