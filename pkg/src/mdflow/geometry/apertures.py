"""Apertures and specific volumes of dimensionally reduced subdomains.

The aperture is the physical opening width of a reduced object; raising it to
the codimension restores full-dimensional measure. Intersection subdomains
inherit the arithmetic mean of the apertures of their higher-dimensional
neighbours, taken over all interface sides.
"""

from __future__ import annotations

import numpy as np

from mdflow.errors import MissingNeighbourData, NonPositiveAperture
from mdflow.geometry.mdg import MixedDimensionalGrid
from mdflow.geometry.projections import ProjectionSet

__all__ = ["specific_volume", "intersection_aperture", "mean_neighbour_aperture"]


def specific_volume(aperture, dim, ambient_dim):
    """aperture**(ambient_dim - dim); identically 1 for full-dimensional grids."""
    aperture = np.asarray(aperture, dtype=float)
    if np.any(aperture <= 0):
        raise NonPositiveAperture("apertures must be strictly positive")
    return aperture ** (ambient_dim - dim)


def mean_neighbour_aperture(contributions):
    """Cellwise mean of stacked neighbour-aperture samples.

    ``contributions`` is a sequence of per-cell arrays, one entry per
    (interface, side) adjacency; all must share the cell count.
    """
    if not contributions:
        raise MissingNeighbourData("no neighbour apertures provided")
    stacked = np.vstack([np.asarray(c, dtype=float) for c in contributions])
    return stacked.mean(axis=0)


def intersection_aperture(
    mdg: MixedDimensionalGrid, projections: ProjectionSet, fracture_apertures
):
    """Apertures on every subdomain of dimension below the fractures.

    Args:
        fracture_apertures: dict mapping each codimension-1 grid to its
            per-cell aperture array (scalars broadcast).

    Returns:
        dict mapping every subdomain of dim < N-1 to its per-cell aperture,
        computed recursively as the mean over all (interface, side) projected
        neighbour apertures.
    """
    N = mdg.ambient_dim
    apertures = {}
    for g in mdg.subdomains_of_dim(N - 1):
        if g not in fracture_apertures:
            raise MissingNeighbourData(f"aperture missing for {g.name}")
        a = np.broadcast_to(
            np.asarray(fracture_apertures[g], dtype=float), (g.num_cells,)
        ).copy()
        if np.any(a <= 0):
            raise NonPositiveAperture(f"aperture on {g.name} must be positive")
        apertures[g] = a

    for d in range(N - 2, -1, -1):
        for g in mdg.subdomains_of_dim(d):
            contributions = []
            for mg in mdg.interfaces_above(g):
                if mg.primary not in apertures:
                    raise MissingNeighbourData(
                        f"{g.name}: neighbour {mg.primary.name} has no aperture"
                    )
                proj = projections.for_interface(mg)
                on_mortar = proj.primary_cell_to_mortar @ apertures[mg.primary]
                for side in range(mg.num_sides):
                    r = proj.side_restriction(side)
                    # Per-side mortar cells align with secondary cells.
                    contributions.append(r @ on_mortar)
            apertures[g] = mean_neighbour_aperture(contributions)
    return {g: a for g, a in apertures.items() if g.dim < N - 1}
