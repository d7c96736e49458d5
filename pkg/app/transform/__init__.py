"""
Data transformation module for the Veli correction toolkit.
"""
