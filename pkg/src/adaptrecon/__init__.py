"""Unrolled MRI reconstruction with hierarchical feature adapters."""

__version__ = "0.1.0"
