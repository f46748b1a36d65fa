"""Random-field uncertainty modeling and sampled convex optimization."""

__version__ = "0.1.0"
