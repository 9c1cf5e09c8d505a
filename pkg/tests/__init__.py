"""
Tests for the slat_bp package.
"""
