"""Transient heat conduction with thin-shell layers and mortar coupling."""

__version__ = "0.1.0"
