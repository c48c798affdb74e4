"""Complex-baseband lab for cross-technology interference on 802.15.4 receptions."""

__version__ = "0.1.0"
