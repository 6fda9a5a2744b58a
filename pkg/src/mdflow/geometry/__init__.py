from mdflow.geometry.apertures import (
    intersection_aperture,
    mean_neighbour_aperture,
    specific_volume,
)
from mdflow.geometry.grids import Grid, cartesian_grid, compute_geometry, point_grid
from mdflow.geometry.mdg import (
    FractureSpec,
    GeometrySpec,
    MixedDimensionalGrid,
    MortarGrid,
    build_mdg,
)
from mdflow.geometry.projections import (
    InterfaceProjections,
    ProjectionSet,
    build_projections,
)

__all__ = [
    "Grid",
    "cartesian_grid",
    "point_grid",
    "compute_geometry",
    "FractureSpec",
    "GeometrySpec",
    "MortarGrid",
    "MixedDimensionalGrid",
    "build_mdg",
    "InterfaceProjections",
    "ProjectionSet",
    "build_projections",
    "specific_volume",
    "intersection_aperture",
    "mean_neighbour_aperture",
]
