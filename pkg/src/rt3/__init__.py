"""Desk-scale toolkit for block-structured + pattern pruning with DVFS-aware
run-time reconfiguration of a shared backbone model."""

__version__ = "0.1.0"
