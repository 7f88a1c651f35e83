"""
Utility functions for the DWR solver
"""
