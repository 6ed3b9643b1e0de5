"""Brinkmann-type Lorentzian metrics: classification, geodesics, holonomy, normal forms."""

__version__ = "0.1.0"
