"""Recovery of a distributed Manning coefficient for the diffusive wave equation."""

__version__ = "0.1.0"
