"""Synthesis of collective communication schedules on bandwidth-constrained topologies."""

__version__ = "0.1.0"
