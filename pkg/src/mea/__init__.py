"""Multi-fidelity upscaling of steady heat conduction fields in two-phase microstructures.

Submodules are imported on demand so that the command-line entry point can
pin BLAS thread counts before numpy loads.
"""
__version__ = "0.1.0"
