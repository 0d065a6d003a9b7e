"""AU-aware graph convolutional spotting of macro- and micro-expressions."""

__version__ = "0.1.0"
