"""Cell-centred finite-volume building blocks as constant sparse maps.

All fluxes are integrated over faces and measured along the stored face
normal; multiplying by the signed incidence transpose (the discrete
divergence) yields net outflow per cell. Boundary data is carried in a
per-face value vector: potential values on Dirichlet faces, outward fluxes
on Neumann and internal (fracture-coupled) faces.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sps

from mdflow.errors import (
    MissingCondition,
    NonPositiveDiffusivity,
    ZeroCellFaceDistance,
)
from mdflow.geometry.grids import Grid

__all__ = [
    "BoundaryCondition",
    "FluxDiscretization",
    "UpwindDiscretization",
    "tpfa",
    "upwind",
    "divergence",
]


class BoundaryCondition:
    """Per-face condition type for one subdomain grid.

    External faces are Dirichlet or Neumann; tip faces are forced to
    zero-flux Neumann; faces created by fracture splitting are internal and
    receive their flux from the interface variables.
    """

    def __init__(self, g: Grid, dirichlet_faces=None):
        self.grid = g
        external = g.tags["external"]
        dir_mask = np.zeros(g.num_faces, dtype=bool)
        if dirichlet_faces is None:
            pass
        elif isinstance(dirichlet_faces, str) and dirichlet_faces == "all":
            dir_mask[:] = external
        else:
            dir_mask[np.asarray(dirichlet_faces, dtype=int)] = True
        if np.any(dir_mask & ~external):
            raise MissingCondition(
                f"{g.name}: Dirichlet faces must be external faces"
            )
        self.is_dirichlet = dir_mask
        self.is_neumann = (external & ~dir_mask) | g.tags["tip"]
        self.is_internal = g.tags["fracture"].copy()
        unassigned = (
            g.boundary_faces
            & ~self.is_dirichlet
            & ~self.is_neumann
            & ~self.is_internal
        )
        if np.any(unassigned):
            raise MissingCondition(
                f"{g.name}: {int(unassigned.sum())} boundary faces without a "
                "condition"
            )

    @property
    def flux_valued(self):
        """Faces whose boundary value is an outward flux."""
        return self.is_neumann | self.is_internal


class FluxDiscretization:
    """Two-point flux maps for one grid and one diffusivity snapshot.

    Attributes:
        flux_cell: (faces x cells) map from cell potentials to face fluxes.
        flux_bound: (faces x faces) map from boundary values to face fluxes.
        trace_cell / trace_bound: reconstruction of the face potential on
            boundary and internal faces (zero rows on interior faces).
        half_trans: per-face boundary half-transmissibility (zero interior).
    """

    def __init__(self, grid, bc, flux_cell, flux_bound, trace_cell,
                 trace_bound, half_trans, diffusivity):
        self.grid = grid
        self.bc = bc
        self.flux_cell = flux_cell
        self.flux_bound = flux_bound
        self.trace_cell = trace_cell
        self.trace_bound = trace_bound
        self.half_trans = half_trans
        self.diffusivity = diffusivity

    def gravity_coefficient(self, gravity):
        """Per-face coefficient c_f such that the gravity contribution to the
        stored flux is c_f times the face density.

        Derived from the two-point difference of the potential rho g . x.
        """
        g = self.grid
        gvec = np.asarray(gravity, dtype=float)[: g.ambient_dim]
        coeff = np.zeros(g.num_faces)
        if not np.any(gvec):
            return coeff
        pos_cell, neg_cell, counts = _face_cell_arrays(g)
        fi = np.flatnonzero(counts == 2)
        trans = np.abs(
            np.asarray(self.flux_cell[fi, pos_cell[fi]]).ravel()
        )
        coeff[fi] = trans * (
            (g.cell_centers[neg_cell[fi]] - g.cell_centers[pos_cell[fi]])
            @ gvec
        )
        fd = np.flatnonzero((counts == 1) & self.bc.is_dirichlet)
        if fd.size:
            bnd_cell = np.where(pos_cell[fd] >= 0, pos_cell[fd], neg_cell[fd])
            sign = np.where(pos_cell[fd] >= 0, 1.0, -1.0)
            coeff[fd] = sign * self.half_trans[fd] * (
                (g.face_centers[fd] - g.cell_centers[bnd_cell]) @ gvec
            )
        return coeff


class UpwindDiscretization:
    """First-order upwind face-value selection for a frozen flux direction.

    ``face_values`` picks the upstream cell on interior faces and the inside
    cell on outflow Dirichlet faces; ``inflow_bound`` routes boundary values
    onto inflow Dirichlet faces. Neumann and internal faces carry their
    advected flux directly and have zero rows in both maps.
    """

    def __init__(self, grid, bc, face_values, inflow_bound, flux_snapshot):
        self.grid = grid
        self.bc = bc
        self.face_values = face_values
        self.inflow_bound = inflow_bound
        self.flux_snapshot = flux_snapshot


def _face_cell_arrays(g: Grid):
    """Per-face incident-cell bookkeeping: positive-sign cell, negative-sign
    cell (-1 where absent) and the count of incident cells."""
    coo = g.cell_faces.tocoo()
    pos_cell = np.full(g.num_faces, -1, dtype=int)
    neg_cell = np.full(g.num_faces, -1, dtype=int)
    counts = np.zeros(g.num_faces, dtype=int)
    up = coo.data > 0
    pos_cell[coo.row[up]] = coo.col[up]
    neg_cell[coo.row[~up]] = coo.col[~up]
    np.add.at(counts, coo.row, 1)
    return pos_cell, neg_cell, counts


def tpfa(g: Grid, diffusivity, bc: BoundaryCondition) -> FluxDiscretization:
    """Two-point flux approximation with harmonic transmissibilities.

    The face flux is t1*t2/(t1+t2) times the potential difference between
    the two incident cells, with half-transmissibilities
    t_c = diffusivity_c * face_area / distance(cell center, face center).
    Dirichlet faces use the single half-transmissibility against the
    boundary value; Neumann and internal faces pass their boundary value
    (an outward flux) straight through.
    """
    diffusivity = np.broadcast_to(
        np.asarray(diffusivity, dtype=float), (g.num_cells,)
    )
    if np.any(diffusivity <= 0):
        raise NonPositiveDiffusivity(
            f"{g.name}: diffusivity must be strictly positive"
        )

    pos_cell, neg_cell, counts = _face_cell_arrays(g)
    interior = counts == 2
    boundary = counts == 1
    bnd_cell = np.where(pos_cell >= 0, pos_cell, neg_cell)
    bnd_sign = np.where(pos_cell >= 0, 1.0, -1.0)

    def half_trans(cells, faces):
        d = np.linalg.norm(
            g.face_centers[faces] - g.cell_centers[cells], axis=1
        )
        if np.any(d <= 0):
            raise ZeroCellFaceDistance(
                f"{g.name}: coinciding cell and face centers"
            )
        return diffusivity[cells] * g.face_areas[faces] / d

    nf, nc = g.num_faces, g.num_cells
    fi = np.flatnonzero(interior)
    t_pos = half_trans(pos_cell[fi], fi)
    t_neg = half_trans(neg_cell[fi], fi)
    t_int = t_pos * t_neg / (t_pos + t_neg)

    fb = np.flatnonzero(boundary)
    t_bnd = np.zeros(nf)
    if fb.size:
        t_bnd[fb] = half_trans(bnd_cell[fb], fb)
    fdir = np.flatnonzero(boundary & bc.is_dirichlet)
    fflx = np.flatnonzero(boundary & ~bc.is_dirichlet)

    rows = np.concatenate([fi, fi, fdir])
    cols = np.concatenate([pos_cell[fi], neg_cell[fi], bnd_cell[fdir]])
    data = np.concatenate([t_int, -t_int, bnd_sign[fdir] * t_bnd[fdir]])
    flux_cell = sps.csr_matrix((data, (rows, cols)), shape=(nf, nc))

    brows = np.concatenate([fdir, fflx])
    bdata = np.concatenate(
        [-bnd_sign[fdir] * t_bnd[fdir], bnd_sign[fflx]]
    )
    flux_bound = sps.csr_matrix((bdata, (brows, brows)), shape=(nf, nf))

    trace_cell = sps.csr_matrix(
        (np.ones(fflx.size), (fflx, bnd_cell[fflx])), shape=(nf, nc)
    )
    tdata = np.concatenate([np.ones(fdir.size), -1.0 / t_bnd[fflx]])
    trace_bound = sps.csr_matrix(
        (tdata, (np.concatenate([fdir, fflx]),) * 2), shape=(nf, nf)
    )
    return FluxDiscretization(
        g, bc, flux_cell, flux_bound, trace_cell, trace_bound, t_bnd,
        diffusivity.copy(),
    )


def upwind(g: Grid, face_flux, bc: BoundaryCondition) -> UpwindDiscretization:
    """Select the upstream cell per face for a frozen signed flux field.

    Positive stored flux selects the cell the normal points out of; zero
    flux selects the cell on the negative-normal side. On Dirichlet faces,
    outflow takes the inside cell and inflow takes the boundary value.
    """
    face_flux = np.asarray(face_flux, dtype=float)
    pos_cell, neg_cell, counts = _face_cell_arrays(g)
    interior = counts == 2

    fi = np.flatnonzero(interior)
    up_cells = np.where(face_flux[fi] > 0, pos_cell[fi], neg_cell[fi])

    boundary_dir = (counts == 1) & bc.is_dirichlet
    fd = np.flatnonzero(boundary_dir)
    bnd_cell = np.where(pos_cell >= 0, pos_cell, neg_cell)
    bnd_sign = np.where(pos_cell >= 0, 1.0, -1.0)
    outward = bnd_sign[fd] * face_flux[fd]
    fd_out = fd[outward >= 0]
    fd_in = fd[outward < 0]

    nf, nc = g.num_faces, g.num_cells
    rows = np.concatenate([fi, fd_out])
    cols = np.concatenate([up_cells, bnd_cell[fd_out]])
    face_values = sps.csr_matrix(
        (np.ones(rows.size), (rows, cols)), shape=(nf, nc)
    )
    inflow_bound = sps.csr_matrix(
        (np.ones(fd_in.size), (fd_in, fd_in)), shape=(nf, nf)
    )
    return UpwindDiscretization(g, bc, face_values, inflow_bound, face_flux.copy())


def divergence(g: Grid):
    """Signed incidence transpose: cell sums of outward face fluxes."""
    return g.cell_faces.T.tocsr()
