"""Space-time upscaling of lattice random walk simulations of reactive transport."""

__version__ = "0.1.0"
