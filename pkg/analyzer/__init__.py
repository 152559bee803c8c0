"""Metrics, multi-seed reports and evaluation experiments."""
