"""Artistic-image aesthetics assessment: degradation pretraining, SAAN model, curation and metrics."""

__version__ = "0.1.0"
