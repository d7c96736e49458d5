"""
Data extraction module for the Veli correction toolkit.
"""
