"""Scalability certificates and design for delayed networks under
multiplex integral control."""

__version__ = "0.1.0"
