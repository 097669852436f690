"""Routing congestion prediction with variational label-correlation enhancement."""

__version__ = "0.1.0"
