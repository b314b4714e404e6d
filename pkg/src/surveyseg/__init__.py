"""Survey segmentation toolkit: inference tests, mixed-type clustering, t-SNE and boosted validation."""

__version__ = "0.1.0"
