"""
Tests package for moesearch.
"""
