"""Class-incremental learning under dual imbalance with spectral adapter merging."""

__version__ = "0.1.0"
