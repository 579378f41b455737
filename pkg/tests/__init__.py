"""
Test package for the panoptic edge evaluation toolkit.
"""
