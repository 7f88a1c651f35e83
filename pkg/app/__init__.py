"""Goal-oriented adaptive DWR solver for the stationary 2D-1 cylinder benchmark"""
__version__ = "1.0.0"
