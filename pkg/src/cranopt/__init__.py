"""Large-scale convex optimization toolkit for dense cloud radio access networks."""

__version__ = "0.1.0"
