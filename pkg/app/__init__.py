"""
Veli: reference-free correction of co-located low-cost air-quality sensors.

This package implements data preparation, a conditional variational correction
model trained without reference data, baselines and the evaluation harness.
"""

__version__ = '1.0.0'
