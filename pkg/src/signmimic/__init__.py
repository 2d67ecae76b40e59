"""Physics-based imitation of sign-language motion clips."""

__version__ = "0.1.0"
