"""Spam-review detection on review graphs, plus synthetic spam-campaign datasets."""

__version__ = "0.1.0"
