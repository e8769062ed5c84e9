"""Voxel diffusion toolkit: guided 3-D shape generation and its evaluation stack."""

__version__ = "0.1.0"
