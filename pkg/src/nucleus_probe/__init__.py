"""Nucleus probing: AVC-aware dependency parsing and diagnostic classifiers."""

__version__ = "0.1.0"
