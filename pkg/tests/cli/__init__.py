"""
CLI tests package.
"""

