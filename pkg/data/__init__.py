"""Synthetic task generators and on-disk feature datasets."""
