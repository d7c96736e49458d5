"""
Metrics, experiment drivers, ablations and evaluation reports.
"""
