"""Session-based recommendation by metric learning.

Sessions and items are embedded into one unit sphere; recommendation is
nearest-neighbour retrieval under cosine distance.  Training runs on a small
tape-based autodiff engine, and classic session baselines plus a strict
no-look-ahead evaluator are included for comparison.
"""

__version__ = "0.1.0"
