"""Desk-scale AutoRL benchmarking: configurable RL trainers, landscape collection and environment subset selection."""

__version__ = "0.1.0"
