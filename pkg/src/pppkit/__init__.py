"""Measure the position information that padding injects into CNN features.

The package holds a small NumPy inference and training engine, padding
schemes, receptive-field alignment, PPP metrics and the experiments built on
them. ``pppkit.cli`` is the command-line front end.
"""

__version__ = "0.1.0"
