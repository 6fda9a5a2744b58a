"""Mixed-dimensional finite-volume simulation of compressible flow and heat
transport in fractured porous media, with a graph-based forward-mode AD
equation layer and a built-in manufactured-solution verification harness."""

__version__ = "0.1.0"
