"""Hybrid FEM / operator-network solver kit."""
