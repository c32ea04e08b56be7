"""Core domain models, errors, RNG and storage."""
