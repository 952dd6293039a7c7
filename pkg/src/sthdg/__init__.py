"""Space-time hybridizable DG for advection-diffusion with adaptive refinement."""

__version__ = "0.1.0"
