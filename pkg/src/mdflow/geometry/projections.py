"""Discrete projection operators between subdomains and mortar interfaces.

For matching grids every map is a 0/+-1 selection matrix. Cell maps carry
scalar fields between the secondary (lower-dimensional) grid and the mortar;
face maps carry face quantities of the primary (higher-dimensional) grid.
Face maps come in two flavours: unsigned for traces of scalar fields,
signed for fluxes, where the sign converts between the face's stored-normal
orientation and the interface convention that flow from the primary towards
the secondary is positive.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sps

from mdflow.errors import MatchingFailure
from mdflow.geometry.mdg import MixedDimensionalGrid, MortarGrid

__all__ = ["InterfaceProjections", "ProjectionSet", "build_projections"]


def _selection(rows, cols, vals, shape):
    return sps.csr_matrix((vals, (rows, cols)), shape=shape)


class InterfaceProjections:
    """Projection maps for one mortar interface.

    Attributes:
        cell_to_mortar: (num_mortar x num_secondary_cells), copies a secondary
            cell field to every side.
        mortar_to_cell: transpose; sums side contributions per secondary cell.
        face_to_mortar_scalar / mortar_to_face_scalar: unsigned face pairing.
        face_to_mortar_flux / mortar_to_face_flux: signed face pairing; a
            positive mortar value means flux from primary towards secondary.
        primary_cell_to_mortar: value of the adjacent primary cell on each
            mortar cell (the trace of a cell field onto the interface).
    """

    def __init__(self, mg: MortarGrid):
        self.mortar = mg
        n_m = mg.num_cells
        n_l = mg.secondary.num_cells
        n_hf = mg.primary.num_faces

        rows = np.arange(n_m)
        sec_cols = np.tile(np.arange(n_l), mg.num_sides)
        self.cell_to_mortar = _selection(
            rows, sec_cols, np.ones(n_m), (n_m, n_l)
        )
        self.mortar_to_cell = self.cell_to_mortar.T.tocsr()

        faces = np.concatenate(mg.side_faces)
        signs = np.concatenate(mg.side_signs)
        self.face_to_mortar_scalar = _selection(
            rows, faces, np.ones(n_m), (n_m, n_hf)
        )
        self.mortar_to_face_scalar = self.face_to_mortar_scalar.T.tocsr()
        self.face_to_mortar_flux = _selection(rows, faces, signs, (n_m, n_hf))
        self.mortar_to_face_flux = self.face_to_mortar_flux.T.tocsr()

        # Each split face has exactly one incident primary cell.
        cf = np.abs(mg.primary.cell_faces).tocsr()
        counts = np.asarray(cf.sum(axis=1)).ravel()[faces]
        if np.any(counts != 1):
            raise MatchingFailure(
                f"{mg.name}: mortar-matched faces must have one incident cell"
            )
        adj_cells = np.asarray(cf[faces].argmax(axis=1)).ravel()
        self.primary_cell_to_mortar = _selection(
            rows, adj_cells, np.ones(n_m), (n_m, mg.primary.num_cells)
        )

    def side_restriction(self, side):
        """0/1 map restricting a full mortar vector to one side's block."""
        sl = self.mortar.side_slice(side)
        n = sl.stop - sl.start
        return _selection(
            np.arange(n),
            np.arange(sl.start, sl.stop),
            np.ones(n),
            (n, self.mortar.num_cells),
        )


class ProjectionSet:
    """Projections for every interface of a mixed-dimensional grid."""

    def __init__(self, mdg: MixedDimensionalGrid):
        self.mdg = mdg
        self._by_interface = {
            mg.id: InterfaceProjections(mg) for mg in mdg.interfaces
        }

    def for_interface(self, mg: MortarGrid) -> InterfaceProjections:
        return self._by_interface[mg.id]


def build_projections(mdg: MixedDimensionalGrid) -> ProjectionSet:
    """Build the discrete projection operators for all interfaces."""
    return ProjectionSet(mdg)
