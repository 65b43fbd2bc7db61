"""Optimal-transport rebalancing and transformer classification for 12-lead ECG beats."""

__version__ = "0.1.0"
