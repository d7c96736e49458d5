"""
Dense networks, gradient tape, Adam and checkpoints for the correction model.
"""
