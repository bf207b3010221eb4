"""hpcs: streaming codec for dynamic neural-Gaussian scenes."""

__version__ = "0.1.0"
