"""Reproduction scenarios and correctness oracles."""
