"""Core module - CLI dispatch, run registry, fingerprints, middleware, errors."""

__version__ = "0.3.0"
