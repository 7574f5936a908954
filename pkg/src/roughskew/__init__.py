"""Rough-volatility skew laboratory."""
