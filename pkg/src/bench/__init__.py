"""Bench orchestration, verification and plotting."""
