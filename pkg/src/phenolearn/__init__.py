"""Phenotype feature learning from sparse, irregularly sampled lab time-series."""

__version__ = "0.1.0"
