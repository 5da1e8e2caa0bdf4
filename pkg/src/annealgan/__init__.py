"""Annealed functional-gradient GAN training on analytic 2-D targets."""

__version__ = "0.1.0"
