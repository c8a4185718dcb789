"""Wolbachia lattice difference equation toolkit."""
