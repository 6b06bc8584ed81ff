"""Optimal between-ride routing for ride-hailing drivers on road networks."""
