"""Experiment layer: configuration files, metrics, sweeps, comparison and the CLI."""
