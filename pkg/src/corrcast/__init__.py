"""Streaming fine-grained field prediction over correlation graphs."""

__version__ = "0.1.0"
