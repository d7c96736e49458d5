"""
Veli correction toolkit

Main entry point for the command-line pipeline: preprocessing, synthetic data,
training, fine-tuning, inference, evaluation and ablations.
"""

import sys

from app.cli import main

if __name__ == "__main__":
    sys.exit(main())
