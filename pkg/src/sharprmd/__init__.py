"""Restarted mirror descent for sharp exact-penalty signal recovery."""

__version__ = "0.1.0"
