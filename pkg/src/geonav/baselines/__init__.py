"""Metaheuristic heading-search baselines."""
