"""Experiment runner: presets, CSV/SVG output and run manifests."""
