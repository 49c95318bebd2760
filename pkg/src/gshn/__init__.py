"""Graph spiking hybrid network for vision-language alignment."""

__version__ = "0.1.0"
