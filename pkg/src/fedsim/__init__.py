"""Simulator for Local-GD and parallel projection on overparameterized linear models."""

__version__ = "0.1.0"
