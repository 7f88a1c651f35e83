"""
Pydantic schemas for run configuration and results
"""
