"""
Integration tests package.
"""

