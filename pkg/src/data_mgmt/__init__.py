"""Run registry: run directories and their artifacts."""
