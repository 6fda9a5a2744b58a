"""Cartesian tensor-product grids of any dimension embedded in ambient 2D/3D space.

A grid of dimension d spans a subset of the ambient axes (``span_axes``) and is
fixed at given coordinates along the remaining axes. Cells are numbered with
the first span axis running fastest; faces are numbered in blocks, one block
per span axis (faces normal to that axis), each block again first-axis-fastest.

Stored face normals are unit normals scaled by the face area, and point along
the positive direction of the axis the face is normal to. The signed incidence
matrix ``cell_faces`` holds +1 where the stored normal points out of the cell
and -1 where it points into the cell, so ``cell_faces.T`` acts as a discrete
divergence on face fluxes measured along stored normals.
"""

from __future__ import annotations

import itertools

import numpy as np
import scipy.sparse as sps

from mdflow.errors import DegenerateCell

__all__ = ["Grid", "cartesian_grid", "point_grid", "compute_geometry"]


class Grid:
    """A single structured subdomain grid.

    Attributes:
        dim: topological dimension of the grid (0 to ambient_dim).
        ambient_dim: dimension of the embedding space (2 or 3).
        span_axes: ambient axes along which the grid extends; empty for dim 0.
        axis_nodes: one strictly increasing node-coordinate array per span axis.
        fixed_coords: coordinate value for each non-span ambient axis.
        cell_faces: signed sparse incidence matrix, shape (num_faces, num_cells).
        face_parent: per face, the structured face it was copied from; equal to
            arange(num_faces) until faces are split.
        tags: boolean face arrays "external", "tip", "fracture" (split faces).
    """

    def __init__(self, ambient_dim, span_axes, axis_nodes, fixed_coords, name=""):
        self.ambient_dim = int(ambient_dim)
        self.span_axes = tuple(int(a) for a in span_axes)
        self.dim = len(self.span_axes)
        self.axis_nodes = [np.asarray(n, dtype=float) for n in axis_nodes]
        self.fixed_coords = dict(fixed_coords)
        self.name = name
        self.id = -1

        for arr in self.axis_nodes:
            if arr.size < 2 or np.any(np.diff(arr) <= 0):
                raise DegenerateCell(
                    f"grid '{name}': axis nodes must be strictly increasing"
                )

        self._build_topology()
        compute_geometry(self)

    # Construction helpers -------------------------------------------------

    def _cells_per_axis(self):
        return [arr.size - 1 for arr in self.axis_nodes]

    def _build_topology(self):
        ncells_ax = self._cells_per_axis()
        self.num_cells = int(np.prod(ncells_ax)) if self.dim > 0 else 1

        if self.dim == 0:
            self.num_faces = 0
            self.num_nodes = 1
            self._cf_rows = np.array([], dtype=int)
            self._cf_cols = np.array([], dtype=int)
            self._cf_sign = np.array([], dtype=float)
            self.face_parent = np.array([], dtype=int)
            self._finalize_incidence()
            return

        self.num_nodes = int(np.prod([arr.size for arr in self.axis_nodes]))

        # Faces normal to span axis k: one extra layer along k.
        self._face_block_sizes = []
        for k in range(self.dim):
            counts = list(ncells_ax)
            counts[k] += 1
            self._face_block_sizes.append(int(np.prod(counts)))
        self._face_block_offsets = np.concatenate(
            ([0], np.cumsum(self._face_block_sizes))
        )
        self.num_faces = int(self._face_block_offsets[-1])
        self.face_parent = np.arange(self.num_faces, dtype=int)

        # Signed incidence: each cell has a lower (-1) and upper (+1) face
        # along every span axis.
        rows, cols, sign = [], [], []
        cell_multi = np.unravel_index(
            np.arange(self.num_cells), ncells_ax, order="F"
        )
        for k in range(self.dim):
            counts = list(ncells_ax)
            counts[k] += 1
            lower = list(cell_multi)
            fid_lo = np.ravel_multi_index(lower, counts, order="F")
            upper = list(cell_multi)
            upper[k] = upper[k] + 1
            fid_hi = np.ravel_multi_index(upper, counts, order="F")
            off = self._face_block_offsets[k]
            rows.extend([off + fid_lo, off + fid_hi])
            cols.extend([np.arange(self.num_cells)] * 2)
            sign.extend(
                [-np.ones(self.num_cells), np.ones(self.num_cells)]
            )
        self._cf_rows = np.concatenate(rows)
        self._cf_cols = np.concatenate(cols)
        self._cf_sign = np.concatenate(sign)
        self._finalize_incidence()

    def _finalize_incidence(self):
        self.cell_faces = sps.csc_matrix(
            (self._cf_sign, (self._cf_rows, self._cf_cols)),
            shape=(self.num_faces, self.num_cells),
        )
        self._refresh_boundary()

    def _refresh_boundary(self):
        cells_per_face = np.asarray(
            np.abs(self.cell_faces).sum(axis=1)
        ).ravel()
        self.boundary_faces = cells_per_face == 1
        if not hasattr(self, "tags"):
            self.tags = {}
        self.tags.setdefault(
            "external", np.zeros(self.num_faces, dtype=bool)
        )
        self.tags.setdefault("tip", np.zeros(self.num_faces, dtype=bool))
        self.tags.setdefault("fracture", np.zeros(self.num_faces, dtype=bool))

    # Face splitting --------------------------------------------------------

    def split_faces(self, face_ids):
        """Duplicate interior faces so each incident cell gets its own copy.

        The original face keeps the cell its stored normal points out of
        (incidence +1); the appended duplicate takes the other cell with
        incidence -1 and identical geometry. Returns the duplicate ids,
        aligned with ``face_ids``.
        """
        face_ids = np.asarray(face_ids, dtype=int)
        if face_ids.size == 0:
            return face_ids.copy()
        coo = self.cell_faces.tocoo()
        dup_ids = np.arange(self.num_faces, self.num_faces + face_ids.size)
        entries = {}
        for r, c, s in zip(coo.row, coo.col, coo.data):
            entries.setdefault(int(r), []).append((int(c), float(s)))

        keep_rows, keep_cols, keep_sign = [], [], []
        to_split = {int(f): i for i, f in enumerate(face_ids)}
        for r, lst in entries.items():
            if r in to_split:
                if len(lst) != 2:
                    raise ValueError(
                        f"face {r} is not interior; cannot split"
                    )
                i = to_split[r]
                for c, s in lst:
                    if s > 0:
                        keep_rows.append(r)
                        keep_cols.append(c)
                        keep_sign.append(s)
                    else:
                        keep_rows.append(dup_ids[i])
                        keep_cols.append(c)
                        keep_sign.append(s)
            else:
                for c, s in lst:
                    keep_rows.append(r)
                    keep_cols.append(c)
                    keep_sign.append(s)

        self.face_parent = np.concatenate(
            [self.face_parent, self.face_parent[face_ids]]
        )
        self.num_faces += face_ids.size
        self._cf_rows = np.asarray(keep_rows, dtype=int)
        self._cf_cols = np.asarray(keep_cols, dtype=int)
        self._cf_sign = np.asarray(keep_sign, dtype=float)
        old_tags = self.tags
        self.tags = {}
        self._finalize_incidence()
        for key, arr in old_tags.items():
            ext = np.concatenate([arr, arr[face_ids]])
            self.tags[key] = ext
        self.tags["fracture"][face_ids] = True
        self.tags["fracture"][dup_ids] = True
        compute_geometry(self)
        return dup_ids

    # Structured lookups ----------------------------------------------------

    def cell_node_indices(self):
        """Node indices per cell, ordered for legacy unstructured-grid cells.

        dim 1: (lo, hi); dim 2: counterclockwise quad; dim 3: hexahedron with
        bottom quad then top quad.
        """
        if self.dim == 0:
            return np.zeros((1, 1), dtype=int)
        ncells_ax = self._cells_per_axis()
        nnodes_ax = [arr.size for arr in self.axis_nodes]
        multi = np.unravel_index(np.arange(self.num_cells), ncells_ax, order="F")

        def node_id(offsets):
            idx = [multi[k] + offsets[k] for k in range(self.dim)]
            return np.ravel_multi_index(idx, nnodes_ax, order="F")

        if self.dim == 1:
            pattern = [(0,), (1,)]
        elif self.dim == 2:
            pattern = [(0, 0), (1, 0), (1, 1), (0, 1)]
        else:
            pattern = [
                (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
            ]
        return np.stack([node_id(p) for p in pattern], axis=1)

    def __repr__(self):
        return (
            f"Grid(dim={self.dim}, cells={self.num_cells}, "
            f"faces={self.num_faces}, name={self.name!r})"
        )


def compute_geometry(g: Grid) -> Grid:
    """Populate cell/face geometry of a grid from its structured node arrays.

    Duplicated (split) faces inherit the geometry of their structured parent
    face. Raises DegenerateCell if any cell volume is not strictly positive.
    """
    N = g.ambient_dim

    if g.dim == 0:
        point = np.zeros(N)
        for a, v in g.fixed_coords.items():
            point[a] = v
        g.nodes = point[None, :]
        g.cell_volumes = np.ones(1)
        g.cell_centers = point[None, :].copy()
        g.face_areas = np.zeros(0)
        g.face_centers = np.zeros((0, N))
        g.face_normals = np.zeros((0, N))
        return g

    spacings = [np.diff(arr) for arr in g.axis_nodes]
    mids = [0.5 * (arr[:-1] + arr[1:]) for arr in g.axis_nodes]
    ncells_ax = g._cells_per_axis()

    # Nodes.
    node_grids = np.meshgrid(*g.axis_nodes, indexing="ij")
    nodes = np.zeros((g.num_nodes, N))
    for k, ax in enumerate(g.span_axes):
        nodes[:, ax] = node_grids[k].ravel(order="F")
    for a, v in g.fixed_coords.items():
        nodes[:, a] = v
    g.nodes = nodes

    # Cells.
    cmulti = np.unravel_index(np.arange(g.num_cells), ncells_ax, order="F")
    centers = np.zeros((g.num_cells, N))
    vols = np.ones(g.num_cells)
    for k, ax in enumerate(g.span_axes):
        centers[:, ax] = mids[k][cmulti[k]]
        vols *= spacings[k][cmulti[k]]
    for a, v in g.fixed_coords.items():
        centers[:, a] = v
    if np.any(vols <= 0):
        raise DegenerateCell(f"grid '{g.name}': nonpositive cell volume")
    g.cell_centers = centers
    g.cell_volumes = vols

    # Structured faces, then copy to split duplicates via face_parent.
    n_struct = int(np.sum(g._face_block_sizes))
    fc = np.zeros((n_struct, N))
    fa = np.ones(n_struct)
    fn = np.zeros((n_struct, N))
    for k in range(g.dim):
        counts = list(ncells_ax)
        counts[k] += 1
        block = np.arange(int(np.prod(counts)))
        fmulti = np.unravel_index(block, counts, order="F")
        off = g._face_block_offsets[k]
        rows = off + block
        for m, ax in enumerate(g.span_axes):
            if m == k:
                fc[rows, ax] = g.axis_nodes[m][fmulti[m]]
            else:
                fc[rows, ax] = mids[m][fmulti[m]]
                fa[rows] *= spacings[m][fmulti[m]]
        for a, v in g.fixed_coords.items():
            fc[rows, a] = v
        fn[rows, g.span_axes[k]] = 1.0
    fn = fn * fa[:, None]

    g.face_centers = fc[g.face_parent]
    g.face_areas = fa[g.face_parent]
    g.face_normals = fn[g.face_parent]
    return g


def cartesian_grid(
    ambient_dim, span_axes, axis_nodes, fixed_coords=None, name=""
) -> Grid:
    """Build a tensor-product grid; boundary faces start tagged external."""
    g = Grid(ambient_dim, span_axes, axis_nodes, fixed_coords or {}, name=name)
    g.tags["external"] = g.boundary_faces.copy()
    return g


def point_grid(ambient_dim, point, name="") -> Grid:
    """Build a 0-dimensional grid at the given point; unit cell volume."""
    fixed = {a: float(point[a]) for a in range(ambient_dim)}
    return Grid(ambient_dim, (), [], fixed, name=name)
