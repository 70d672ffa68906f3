"""Data-poisoning attacks on alternating-minimization and nuclear-norm collaborative filtering."""

__version__ = "0.1.0"
