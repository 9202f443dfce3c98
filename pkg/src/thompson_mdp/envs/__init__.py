"""Environments: influenza on contact networks, mallard harvest, and small
synthetic models with exact answers."""
