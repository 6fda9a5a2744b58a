"""Mixed-dimensional grids: subdomains of successive dimension plus mortar
interfaces between codimension-1 neighbours.

Supported geometry is deliberately narrow: tensor-product Cartesian grids with
axis-aligned, grid-conforming fractures that either cross each other fully or
not at all. Within that class the construction is exact: every lower
dimensional grid reuses slices of the global per-axis node arrays, so face and
cell centers match bit-for-bit and mortar pairing needs no fuzzy search.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mdflow.errors import (
    MatchingFailure,
    NonConformingGeometry,
    UnsupportedGeometry,
)
from mdflow.geometry.grids import Grid, cartesian_grid, point_grid

__all__ = [
    "FractureSpec",
    "GeometrySpec",
    "MortarGrid",
    "MixedDimensionalGrid",
    "build_mdg",
]


@dataclass
class FractureSpec:
    """An axis-aligned planar fracture: fixed coordinate plus in-plane extents.

    In 3D ``extents`` holds the two in-plane axes; in 2D the single one.
    """

    normal_axis: int
    value: float
    extents: dict  # axis -> (lo, hi)


@dataclass
class GeometrySpec:
    ambient_dim: int
    box: list  # per axis (lo, hi)
    cells: list  # per axis cell count
    fractures: list = field(default_factory=list)

    def domain_diagonal(self):
        lo = np.array([b[0] for b in self.box], dtype=float)
        hi = np.array([b[1] for b in self.box], dtype=float)
        return float(np.linalg.norm(hi - lo))


class MortarGrid:
    """Interface grid between a subdomain pair one dimension apart.

    Cells are ordered side-major and, within a side, follow the secondary
    grid's cell ordering; the matched primary faces are stored per side. For
    each mortar cell the primary face has exactly one incident cell and
    ``sign`` records its incidence entry, i.e. whether the stored face normal
    points towards (+1) or away from (-1) the interface.
    """

    def __init__(self, mortar_id, primary, secondary, side_faces, side_signs):
        self.id = mortar_id
        self.primary: Grid = primary
        self.secondary: Grid = secondary
        self.dim = secondary.dim
        self.side_faces = [np.asarray(f, dtype=int) for f in side_faces]
        self.side_signs = [np.asarray(s, dtype=float) for s in side_signs]
        self.num_sides = len(self.side_faces)
        n = secondary.num_cells
        self.cells_per_side = n
        self.num_cells = self.num_sides * n
        self.cell_volumes = np.tile(secondary.cell_volumes, self.num_sides)
        self.cell_centers = np.tile(secondary.cell_centers, (self.num_sides, 1))
        self.name = f"mortar_{primary.name}_{secondary.name}"

    def side_slice(self, side):
        n = self.cells_per_side
        return slice(side * n, (side + 1) * n)

    def __repr__(self):
        return (
            f"MortarGrid(dim={self.dim}, sides={self.num_sides}, "
            f"cells={self.num_cells}, name={self.name!r})"
        )


class MixedDimensionalGrid:
    """Graph of subdomain grids and mortar interfaces."""

    def __init__(self, ambient_dim, box):
        self.ambient_dim = ambient_dim
        self.box = box
        self.subdomains: list[Grid] = []
        self.interfaces: list[MortarGrid] = []

    def add_subdomain(self, g: Grid):
        g.id = len(self.subdomains)
        self.subdomains.append(g)

    def add_interface(self, primary, secondary, side_faces, side_signs):
        mg = MortarGrid(
            len(self.interfaces), primary, secondary, side_faces, side_signs
        )
        self.interfaces.append(mg)
        return mg

    def subdomains_of_dim(self, d):
        return [g for g in self.subdomains if g.dim == d]

    def dim_max(self):
        return max(g.dim for g in self.subdomains)

    def matrix_subdomain(self):
        return self.subdomains_of_dim(self.ambient_dim)[0]

    def interfaces_above(self, g: Grid):
        """Interfaces coupling g to its higher-dimensional neighbours."""
        return [mg for mg in self.interfaces if mg.secondary is g]

    def interfaces_below(self, g: Grid):
        return [mg for mg in self.interfaces if mg.primary is g]

    def num_subdomain_cells(self):
        return sum(g.num_cells for g in self.subdomains)

    def __repr__(self):
        dims = sorted((g.dim for g in self.subdomains), reverse=True)
        return (
            f"MixedDimensionalGrid(subdomain dims={dims}, "
            f"interfaces={len(self.interfaces)})"
        )


# Internal geometric bookkeeping -------------------------------------------


@dataclass
class _LowerObject:
    """A candidate lower-dimensional subdomain before grids are built."""

    span_axes: tuple
    fixed: dict  # axis -> value
    extents: dict  # axis -> (lo, hi), keys == span_axes
    parents: list  # indices into the next-higher level's object list


def _grid_line_index(nodes, value, tol):
    idx = np.flatnonzero(np.abs(nodes - value) <= tol)
    if idx.size != 1:
        return None
    return int(idx[0])


def _interval_position(value, lo, hi, tol):
    """Classify value against [lo, hi]: 'inside', 'boundary' or 'outside'."""
    if value < lo - tol or value > hi + tol:
        return "outside"
    if abs(value - lo) <= tol or abs(value - hi) <= tol:
        return "boundary"
    return "inside"


def build_mdg(spec: GeometrySpec) -> MixedDimensionalGrid:
    """Construct the mixed-dimensional grid for an axis-aligned geometry.

    Creates the full-dimensional subdomain, one subdomain per fracture, one
    per nonempty fracture intersection (recursively down to points), and one
    two-sided mortar interface per codimension-1 adjacency. Matrix faces on a
    fracture are split so each fracture side couples through its own faces.
    """
    N = spec.ambient_dim
    if N not in (2, 3):
        raise UnsupportedGeometry(f"ambient dimension must be 2 or 3, got {N}")
    tol = 1e-10 * max(spec.domain_diagonal(), 1.0)

    axis_nodes = []
    for a in range(N):
        lo, hi = spec.box[a]
        n = int(spec.cells[a])
        if hi <= lo or n < 1:
            raise UnsupportedGeometry(f"empty box or cell count on axis {a}")
        axis_nodes.append(np.linspace(lo, hi, n + 1))

    # Validate fractures against the grid lines.
    for i, f in enumerate(spec.fractures):
        if f.normal_axis not in range(N):
            raise UnsupportedGeometry(f"fracture {i}: bad normal axis")
        if set(f.extents) != set(range(N)) - {f.normal_axis}:
            raise UnsupportedGeometry(
                f"fracture {i}: extents must cover the in-plane axes"
            )
        if _grid_line_index(axis_nodes[f.normal_axis], f.value, tol) is None:
            raise NonConformingGeometry(
                f"fracture {i}: plane {f.value} not on a grid line"
            )
        lo, hi = spec.box[f.normal_axis]
        if not (lo + tol < f.value < hi - tol):
            raise UnsupportedGeometry(
                f"fracture {i}: plane must be strictly inside the domain"
            )
        for a, (elo, ehi) in f.extents.items():
            if ehi - elo <= tol:
                raise UnsupportedGeometry(f"fracture {i}: empty extent")
            for v in (elo, ehi):
                if _grid_line_index(axis_nodes[a], v, tol) is None:
                    raise NonConformingGeometry(
                        f"fracture {i}: extent {v} on axis {a} "
                        "not on a grid line"
                    )

    for i, fi in enumerate(spec.fractures):
        for j in range(i + 1, len(spec.fractures)):
            fj = spec.fractures[j]
            if fi.normal_axis == fj.normal_axis and abs(fi.value - fj.value) <= tol:
                overlap = all(
                    min(fi.extents[a][1], fj.extents[a][1])
                    - max(fi.extents[a][0], fj.extents[a][0])
                    > tol
                    for a in fi.extents
                )
                if overlap:
                    raise UnsupportedGeometry(
                        f"fractures {i} and {j} overlap in the same plane"
                    )

    mdg = MixedDimensionalGrid(N, [tuple(b) for b in spec.box])
    matrix = cartesian_grid(N, tuple(range(N)), axis_nodes, name="matrix")
    mdg.add_subdomain(matrix)

    frac_objs = [
        _LowerObject(
            span_axes=tuple(sorted(f.extents)),
            fixed={f.normal_axis: f.value},
            extents=dict(f.extents),
            parents=[0],  # the matrix
        )
        for f in spec.fractures
    ]

    def intersect(objs, level_name):
        """Pairwise intersections of same-dimension objects, deduplicated."""
        found = []
        for i in range(len(objs)):
            for j in range(i + 1, len(objs)):
                oi, oj = objs[i], objs[j]
                if oi.fixed.keys() == oj.fixed.keys():
                    continue  # parallel objects do not intersect transversally
                span = tuple(sorted(set(oi.span_axes) & set(oj.span_axes)))
                fixed = {}
                ok = True
                for a, v in list(oi.fixed.items()) + list(oj.fixed.items()):
                    if a in fixed and abs(fixed[a] - v) > tol:
                        ok = False
                        break
                    fixed[a] = v
                if not ok:
                    continue
                # Each object's fixed coords must sit inside the other's span
                # extent; touching the rim is a T-style junction.
                for a, v in oi.fixed.items():
                    if a in oj.extents:
                        pos = _interval_position(v, *oj.extents[a], tol)
                        if pos == "outside":
                            ok = False
                        elif pos == "boundary":
                            raise UnsupportedGeometry(
                                f"{level_name}: junction touching an object "
                                "rim is not supported"
                            )
                for a, v in oj.fixed.items():
                    if a in oi.extents:
                        pos = _interval_position(v, *oi.extents[a], tol)
                        if pos == "outside":
                            ok = False
                        elif pos == "boundary":
                            raise UnsupportedGeometry(
                                f"{level_name}: junction touching an object "
                                "rim is not supported"
                            )
                if not ok:
                    continue
                extents = {}
                empty = False
                for a in span:
                    lo = max(oi.extents[a][0], oj.extents[a][0])
                    hi = min(oi.extents[a][1], oj.extents[a][1])
                    if hi - lo <= tol:
                        empty = True
                    extents[a] = (lo, hi)
                if empty:
                    continue
                found.append(
                    _LowerObject(span, fixed, extents, parents=[i, j])
                )
        # Deduplicate identical objects (e.g. three planes sharing one line).
        merged = []
        for obj in found:
            hit = None
            for m in merged:
                if m.fixed.keys() != obj.fixed.keys():
                    continue
                if any(abs(m.fixed[a] - obj.fixed[a]) > tol for a in m.fixed):
                    continue
                same = all(
                    abs(m.extents[a][0] - obj.extents[a][0]) <= tol
                    and abs(m.extents[a][1] - obj.extents[a][1]) <= tol
                    for a in m.extents
                )
                overlap = all(
                    min(m.extents[a][1], obj.extents[a][1])
                    - max(m.extents[a][0], obj.extents[a][0])
                    > tol
                    for a in m.extents
                ) if m.extents else True
                if same:
                    hit = m
                    break
                if overlap:
                    raise UnsupportedGeometry(
                        f"{level_name}: partially overlapping intersections"
                    )
            if hit is None:
                merged.append(obj)
            else:
                hit.parents = sorted(set(hit.parents) | set(obj.parents))
        return merged

    line_objs = intersect(frac_objs, "fracture intersections") if N == 3 else []
    if N == 3:
        point_objs = intersect(line_objs, "intersection points")
    else:
        point_objs = intersect(frac_objs, "fracture crossings")

    def build_lower_grid(obj, name):
        if not obj.span_axes:
            point = np.zeros(N)
            for a, v in obj.fixed.items():
                point[a] = v
            return point_grid(N, point, name=name)
        sub_nodes = []
        for a in obj.span_axes:
            lo, hi = obj.extents[a]
            i0 = _grid_line_index(axis_nodes[a], lo, tol)
            i1 = _grid_line_index(axis_nodes[a], hi, tol)
            if i0 is None or i1 is None:
                raise NonConformingGeometry(
                    f"{name}: extent not on grid lines"
                )
            sub_nodes.append(axis_nodes[a][i0 : i1 + 1])
        g = cartesian_grid(N, obj.span_axes, sub_nodes, obj.fixed, name=name)
        _tag_external_or_tip(g, spec.box, tol)
        return g

    frac_grids = [
        build_lower_grid(o, f"fracture_{i}") for i, o in enumerate(frac_objs)
    ]
    line_grids = [
        build_lower_grid(o, f"intersection_{i}") for i, o in enumerate(line_objs)
    ]
    point_grids = [
        build_lower_grid(o, f"point_{i}") for i, o in enumerate(point_objs)
    ]
    for g in frac_grids + line_grids + point_grids:
        mdg.add_subdomain(g)

    # Parent/child pairs, higher dimension first.
    pairs = []
    for i, obj in enumerate(frac_objs):
        pairs.append((matrix, frac_grids[i]))
    if N == 3:
        for i, obj in enumerate(line_objs):
            for p in obj.parents:
                pairs.append((frac_grids[p], line_grids[i]))
        for i, obj in enumerate(point_objs):
            for p in obj.parents:
                pairs.append((line_grids[p], point_grids[i]))
    else:
        for i, obj in enumerate(point_objs):
            for p in obj.parents:
                pairs.append((frac_grids[p], point_grids[i]))

    # Identify coincident faces per pair before any split changes face ids.
    pair_faces = [
        _faces_on_child(parent, child, tol) for parent, child in pairs
    ]

    # Split parent faces and build mortars, processing parents one by one.
    for (parent, child), faces in zip(pairs, pair_faces):
        dup = parent.split_faces(faces)
        side0 = _match_faces_to_cells(parent, faces, child, tol)
        side1 = _match_faces_to_cells(parent, dup, child, tol)
        signs = []
        cf = parent.cell_faces.tocsr()
        for side in (side0, side1):
            s = np.zeros(side.size)
            for k, f in enumerate(side):
                row = cf.getrow(f)
                if row.nnz != 1:
                    raise MatchingFailure(
                        f"split face {f} of {parent.name} has {row.nnz} cells"
                    )
                s[k] = row.data[0]
            signs.append(s)
        mdg.add_interface(parent, child, [side0, side1], signs)

    return mdg


def _tag_external_or_tip(g: Grid, box, tol):
    """Boundary faces on the domain box are external; the rest are tips."""
    external = np.zeros(g.num_faces, dtype=bool)
    for f in np.flatnonzero(g.boundary_faces):
        c = g.face_centers[f]
        on_box = any(
            abs(c[a] - box[a][0]) <= tol or abs(c[a] - box[a][1]) <= tol
            for a in range(g.ambient_dim)
        )
        external[f] = on_box
    g.tags["external"] = external
    g.tags["tip"] = g.boundary_faces & ~external


def _faces_on_child(parent: Grid, child: Grid, tol):
    """Parent faces geometrically coinciding with the child subdomain."""
    fixed_axes = [a for a in parent.span_axes if a not in child.span_axes]
    mask = np.ones(parent.num_faces, dtype=bool)
    for a in fixed_axes:
        v = child.fixed_coords[a]
        mask &= np.abs(parent.face_centers[:, a] - v) <= tol
        # Only faces normal to the fixed axis qualify.
        mask &= np.abs(parent.face_normals[:, a]) > tol
    for k, a in enumerate(child.span_axes):
        lo, hi = child.axis_nodes[k][0], child.axis_nodes[k][-1]
        mask &= parent.face_centers[:, a] > lo + tol
        mask &= parent.face_centers[:, a] < hi - tol
    mask &= ~parent.tags["fracture"]
    faces = np.flatnonzero(mask)
    if faces.size != child.num_cells:
        raise MatchingFailure(
            f"{parent.name}: found {faces.size} faces on {child.name}, "
            f"expected {child.num_cells}"
        )
    return faces


def _match_faces_to_cells(parent: Grid, faces, child: Grid, tol):
    """Reorder parent faces so entry i matches child cell i by center."""
    faces = np.asarray(faces, dtype=int)
    quant = max(tol, 1e-300)
    lookup = {}
    for f in faces:
        key = tuple(np.round(parent.face_centers[f] / quant).astype(np.int64))
        if key in lookup:
            raise MatchingFailure(
                f"{parent.name}: duplicate face center at face {f}"
            )
        lookup[key] = f
    ordered = np.empty(child.num_cells, dtype=int)
    for c in range(child.num_cells):
        key = tuple(np.round(child.cell_centers[c] / quant).astype(np.int64))
        if key not in lookup:
            raise MatchingFailure(
                f"no face of {parent.name} matches cell {c} of {child.name}"
            )
        ordered[c] = lookup.pop(key)
    return ordered
