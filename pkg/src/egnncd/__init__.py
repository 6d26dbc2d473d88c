"""EGNN-CD cognitive diagnosis toolkit."""

__version__ = "0.1.0"
