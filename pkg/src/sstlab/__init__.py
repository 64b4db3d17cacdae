"""Strong stationary duals of birth-death chains and branch graphs."""

__version__ = "0.1.0"
