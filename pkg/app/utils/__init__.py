"""
Utility functions for the Veli correction toolkit.
"""
