"""Exo-to-ego cross-view video generation as continuous sequence diffusion,
trained and evaluated on a procedural synthetic world with exact poses."""

__version__ = "0.1.0"
