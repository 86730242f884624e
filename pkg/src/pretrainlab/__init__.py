"""Desk-scale laboratory for unsupervised pre-training theory."""

__version__ = "0.1.0"
