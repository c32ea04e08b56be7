"""Editing quality metrics and trajectory diagnostics."""
