"""Style-consistency analysis, ranking, and data-selection toolkit."""

__version__ = "0.1.0"
