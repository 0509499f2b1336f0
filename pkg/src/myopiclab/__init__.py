"""Myopic channel selection for opportunistic access with noisy sensing."""
