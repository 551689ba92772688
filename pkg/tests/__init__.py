"""
Test package for aggregate-decouple.
"""

