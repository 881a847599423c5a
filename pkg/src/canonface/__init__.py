"""Canonical-view face scoring, recovery-network training, and verification."""

__version__ = "0.1.0"
