"""ffdconv - Full-frequency dynamic convolution for sound event detection."""

__version__ = "0.1.0"
