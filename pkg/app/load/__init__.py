"""
Output writers for the Veli correction toolkit.
"""
