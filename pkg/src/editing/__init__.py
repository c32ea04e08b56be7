"""Editing samplers and noise derivation."""
