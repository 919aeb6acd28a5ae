"""Dataset pruning by training-dynamics importance scores"""

__version__ = "0.1.0"
