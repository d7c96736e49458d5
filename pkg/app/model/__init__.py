"""
Conditional variational correction model: heads, loss, training and inference.
"""
