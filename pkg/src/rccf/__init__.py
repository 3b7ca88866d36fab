"""Cross-modality correlation filtering for referring expression comprehension."""

__version__ = "0.1.0"
