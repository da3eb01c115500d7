"""
Unit tests for the egocentric spatial QA toolkit
"""
