"""Interactive concept transfer: training-free diffusion editing with a
session service, studio-oriented REST API, and batch CLI."""

__version__ = "0.1.0"
