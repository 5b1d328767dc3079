"""Cross-attention fusion of crystal graphs and text for property prediction."""

__version__ = "0.1.0"
