"""Optical funnel guiding of cold atoms into a microring near field."""

__version__ = "0.1.0"
