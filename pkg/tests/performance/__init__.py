"""
Performance tests package.
"""

