"""Replication runner and the flu, mallard, regret-curve and radius experiments."""
