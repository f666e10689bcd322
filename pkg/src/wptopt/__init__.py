"""Optimal passive loading of multi-loop wireless power transfer systems."""
