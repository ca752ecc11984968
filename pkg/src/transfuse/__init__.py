"""Self-supervised destruction-reconstruction training and two-stage image fusion."""

__version__ = "0.1.0"
