"""bridgefov: CT field-of-view extension with a paired-image diffusion bridge."""

__version__ = "0.1.0"
