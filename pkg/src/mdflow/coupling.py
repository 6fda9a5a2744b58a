"""Graph factories for the interface laws coupling subdomains one dimension
apart: Darcy-type volumetric flux and diffusive heat flux driven by the jump
between the lower-dimensional potential and the trace of the
higher-dimensional one, and flux-directed upwinding of advected coefficients
across the interface.

All interface fluxes are densities per mortar-cell area, positive from the
higher-dimensional towards the lower-dimensional side.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sps

from mdflow.ad.operators import Constant, LinearMap, OperatorNode, apply_map
from mdflow.geometry.projections import InterfaceProjections

__all__ = [
    "potential_trace",
    "interface_darcy_map",
    "interface_fourier_map",
    "InterfaceUpwind",
    "interface_advective_map",
]


def potential_trace(disc, potential_node, bound_value_node) -> OperatorNode:
    """Face potential reconstructed from the two-point relation.

    On Dirichlet faces this is the boundary value itself; on Neumann and
    internal faces it is the cell value corrected by outward flux over the
    half-transmissibility. Rows for interior faces are zero.
    """
    return apply_map(disc.trace_cell, potential_node) + apply_map(
        disc.trace_bound, bound_value_node
    )


def _jump_expression(proj, aperture_secondary, secondary_node, trace_node):
    """(2 / projected aperture) * (secondary potential - primary trace)."""
    a_on_mortar = proj.cell_to_mortar @ np.broadcast_to(
        np.asarray(aperture_secondary, dtype=float),
        (proj.mortar.secondary.num_cells,),
    )
    jump = apply_map(proj.cell_to_mortar, secondary_node) - apply_map(
        proj.face_to_mortar_scalar, trace_node
    )
    return (2.0 / a_on_mortar) * jump


def interface_darcy_map(
    proj: InterfaceProjections,
    aperture_secondary,
    mobility,
    secondary_pressure,
    primary_pressure_trace,
    gravity_normal=None,
    gravity_density=None,
) -> OperatorNode:
    """Darcy-type interface flux law.

    Evaluates to minus the mobility (permeability over viscosity, both
    inherited as interface quantities) times the aperture-scaled pressure
    jump, with an optional gravity contribution using the upwinded interface
    density. Returned as the expression the interface flux variable must
    equal.
    """
    jump = _jump_expression(
        proj, aperture_secondary, secondary_pressure, primary_pressure_trace
    )
    if gravity_normal is not None and np.any(gravity_normal):
        jump = jump - Constant(np.asarray(gravity_normal, dtype=float)) * (
            gravity_density
        )
    return -1.0 * (mobility * jump)


def interface_fourier_map(
    proj: InterfaceProjections,
    aperture_secondary,
    conductivity,
    secondary_temperature,
    primary_temperature_trace,
) -> OperatorNode:
    """Diffusive interface heat flux; as the Darcy law with temperature in
    place of pressure, conductivity in place of mobility and no gravity."""
    jump = _jump_expression(
        proj, aperture_secondary, secondary_temperature, primary_temperature_trace
    )
    return -1.0 * (conductivity * jump)


class InterfaceUpwind:
    """Flux-directed selection of advected interface coefficients.

    Where the interface flux snapshot is positive (flow from the higher- to
    the lower-dimensional side) the primary trace is selected, otherwise the
    secondary value. The snapshot is lagged; ``refresh`` swaps the selection
    matrices for a new flux snapshot.
    """

    def __init__(self, proj: InterfaceProjections, flux_snapshot=None):
        self.proj = proj
        n = proj.mortar.num_cells
        if flux_snapshot is None:
            flux_snapshot = np.zeros(n)
        hi, lo = self._selectors(flux_snapshot)
        self._primary_side = LinearMap(hi, Constant(np.zeros(n)), "upwind_primary")
        self._secondary_side = LinearMap(
            lo, Constant(np.zeros(n)), "upwind_secondary"
        )
        self._uses = []

    def _selectors(self, flux):
        flux = np.asarray(flux, dtype=float)
        hi = sps.diags((flux > 0).astype(float)).tocsr()
        lo = sps.diags((flux <= 0).astype(float)).tocsr()
        return hi, lo

    def select(self, primary_cell_node, secondary_node) -> OperatorNode:
        """Upwinded interface value of a quantity given on both subdomains."""
        on_primary = apply_map(
            self.proj.primary_cell_to_mortar, primary_cell_node
        )
        on_secondary = apply_map(self.proj.cell_to_mortar, secondary_node)
        hi = LinearMap(self._primary_side.matrix, on_primary, "upwind_primary")
        lo = LinearMap(
            self._secondary_side.matrix, on_secondary, "upwind_secondary"
        )
        self._uses.append((hi, lo))
        return hi + lo

    def refresh(self, flux_snapshot):
        hi, lo = self._selectors(flux_snapshot)
        self._primary_side.set_matrix(hi)
        self._secondary_side.set_matrix(lo)
        for h, l in self._uses:
            h.set_matrix(hi)
            l.set_matrix(lo)


def interface_advective_map(
    upw: InterfaceUpwind, primary_cell_node, secondary_node, interface_flux
) -> OperatorNode:
    """Advected interface flux: upwinded coefficient times the interface flux."""
    return upw.select(primary_cell_node, secondary_node) * interface_flux
