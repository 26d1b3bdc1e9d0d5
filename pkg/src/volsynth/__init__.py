"""Volumetric low-field to high-field MRI synthesis at desk scale."""

__version__ = "0.1.0"
