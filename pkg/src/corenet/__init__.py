"""Cooperative regressor networks for blind radar signal restoration."""

__version__ = "0.1.0"
