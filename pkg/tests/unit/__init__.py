"""
Unit tests package.
"""

