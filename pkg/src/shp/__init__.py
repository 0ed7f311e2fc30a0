"""History covert channel over broadcast-domain traffic."""

__version__ = "0.1.0"
