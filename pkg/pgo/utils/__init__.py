"""Utility helpers for pgo."""
