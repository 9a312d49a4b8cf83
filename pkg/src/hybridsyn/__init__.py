"""Co-synthesis of controllers and Lyapunov barrier certificates for jump-flow systems."""

__version__ = "0.1.0"
