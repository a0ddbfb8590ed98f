"""Seal-imprint character segmentation and typeface glyph retrieval."""

__version__ = "0.1.0"
