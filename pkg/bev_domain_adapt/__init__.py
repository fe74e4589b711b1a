"""Desk-scale multi-source multi-modality domain-adaptive BEV 3D detection."""

__version__ = "0.1.0"
