"""
Synthetic sensor streams with controllable noise.
"""
