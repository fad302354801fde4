"""Losses, the Adam optimizer, the training loop and verification scoring."""
