"""Governing equations for compressible single-phase flow and heat transport
on a mixed-dimensional grid, assembled as operator graphs.

The model registers pressure and temperature on every subdomain, a volumetric
flux on every interface and, with energy enabled, interface enthalpy and heat
fluxes as further primary variables whose defining laws become residual
equations. Internal continuity is structural: the subdomain boundary data on
fracture-coupled faces is the projected interface flux expression, so the
interface variables are the single source of truth and interface terms cancel
in conservation sums.

Scenario specifics (boundary types and values, sources, initial fields) enter
through overridable hook methods, mirroring how run scripts customise the
ready-made model classes in this problem domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from mdflow import coupling, fvm
from mdflow.ad.operators import (
    Constant,
    LinearMap,
    OperatorNode,
    Parameter,
    apply_function,
    apply_map,
    evaluate,
    exp,
)
from mdflow.ad.system import EquationSystem
from mdflow.errors import (
    MissingDiscretization,
    TemperatureBelowVogelCutoff,
)
from mdflow.geometry import (
    MixedDimensionalGrid,
    build_projections,
    intersection_aperture,
    specific_volume,
)

__all__ = [
    "FluidParams",
    "SolidParams",
    "MaterialParams",
    "fluid_density",
    "fluid_viscosity",
    "fluid_enthalpy",
    "fluid_internal_energy",
    "solid_internal_energy",
    "effective_quantity",
    "FlowEnergyModel",
]


# Material data ---------------------------------------------------------------


@dataclass
class FluidParams:
    """Fluid properties; defaults are the water-like set used in the demo."""

    reference_density: float = 1.00e3  # kg/m^3
    compressibility: float = 4.0e-10  # 1/Pa
    thermal_expansion: float = 2.10e-4  # 1/K
    heat_capacity: float = 4.18e3  # J/(kg K)
    conductivity: float = 6.0e-1  # W/(m K)
    viscosity: float = 1.0e-3  # Pa s, constant model
    vogel: tuple | None = None  # (A [Pa s], B [K], C [K]) for mu(T)


@dataclass
class SolidParams:
    density: float = 2.70e3  # kg/m^3
    heat_capacity: float = 7.90e2  # J/(kg K)
    conductivity: float = 2.5  # W/(m K)
    porosity: float = 5.0e-2
    permeability: float = 2.0e-15  # m^2


@dataclass
class MaterialParams:
    fluid: FluidParams = field(default_factory=FluidParams)
    solid: SolidParams = field(default_factory=SolidParams)
    residual_aperture: float = 5.0e-4  # m
    reference_pressure: float = 1.01e5  # Pa
    reference_temperature: float = 4.00e2  # K
    gravity: tuple = (0.0, 0.0, 0.0)  # m/s^2
    fracture_porosity: float = 1.0
    fracture_permeability: float | None = None  # None: cubic law a^2/12

    def validate(self):
        positive = {
            "fluid.reference_density": self.fluid.reference_density,
            "fluid.compressibility": self.fluid.compressibility,
            "fluid.thermal_expansion": self.fluid.thermal_expansion,
            "fluid.heat_capacity": self.fluid.heat_capacity,
            "fluid.conductivity": self.fluid.conductivity,
            "fluid.viscosity": self.fluid.viscosity,
            "solid.density": self.solid.density,
            "solid.heat_capacity": self.solid.heat_capacity,
            "solid.conductivity": self.solid.conductivity,
            "solid.porosity": self.solid.porosity,
            "solid.permeability": self.solid.permeability,
            "residual_aperture": self.residual_aperture,
            "reference_temperature": self.reference_temperature,
            "fracture_porosity": self.fracture_porosity,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"material parameter {name} must be positive")
        # The reference pressure is an offset and may legitimately be zero.
        if self.reference_pressure < 0:
            raise ValueError("reference_pressure must be nonnegative")
        return self


# Constitutive laws as graph factories ---------------------------------------


def fluid_density(p, T, params: MaterialParams) -> OperatorNode:
    """Exponential equation of state in pressure and temperature.

    rho0 * exp(c (p - p0) - beta (T - T0)); the temperature term is dropped
    when T is None (isothermal flow model).
    """
    f = params.fluid
    arg = f.compressibility * (p - params.reference_pressure)
    if T is not None:
        arg = arg - f.thermal_expansion * (T - params.reference_temperature)
    return f.reference_density * exp(arg)


def fluid_viscosity(T, params: MaterialParams):
    """Constant viscosity, or the exponential-in-inverse-temperature model
    mu_A exp(mu_B / (T - mu_C)) when Vogel parameters are set."""
    f = params.fluid
    if f.vogel is None:
        return f.viscosity
    if T is None:
        raise TemperatureBelowVogelCutoff(
            "temperature-dependent viscosity requires the energy model"
        )
    mu_a, mu_b, mu_c = f.vogel

    def check_cutoff(v):
        if np.any(v <= 0):
            raise TemperatureBelowVogelCutoff(
                "temperature at or below the viscosity cutoff"
            )
        return v

    guarded = apply_function(
        "vogel_shift", check_cutoff, lambda v: np.ones_like(v), T - mu_c
    )
    return mu_a * exp(mu_b / guarded)


def fluid_enthalpy(T, params: MaterialParams) -> OperatorNode:
    """h = C_f (T - T0)."""
    return params.fluid.heat_capacity * (T - params.reference_temperature)


def fluid_internal_energy(h, p, rho) -> OperatorNode:
    """u_f = h - p / rho."""
    return h - p / rho


def solid_internal_energy(T, params: MaterialParams) -> OperatorNode:
    """u_s = C_s (T - T0)."""
    return params.solid.heat_capacity * (T - params.reference_temperature)


def effective_quantity(porosity, fluid_part, solid_part):
    """Porosity-weighted sum: phi * fluid + (1 - phi) * solid."""
    return porosity * fluid_part + (1.0 - porosity) * solid_part


# The model -------------------------------------------------------------------


class _SubdomainWork:
    """Per-subdomain nodes and data the model keeps for reuse."""

    def __init__(self):
        self.nu = None  # specific volume, per cell
        self.phi = None
        self.perm = None
        self.volumes = None
        self.bc_flow = None
        self.bc_energy = None
        self.disc_flow = None
        self.disc_fourier = None
        self.q_vol = None  # volumetric flux node (faces)
        self.mass_faces = None
        self.energy_faces = None
        self.acc_mass = None  # accumulation node incl. 1/dt
        self.acc_energy = None
        self.rho = None
        self.upwind_map = None  # LinearMap with lagged directions (flow)
        self.upwind_map_energy = None
        self.inflow_coef = None  # Parameter on inflow Dirichlet faces
        self.inflow_coef_energy = None
        self.bvals_flow = None  # Parameter: external boundary values
        self.bvals_energy = None
        self.source_flow = None  # Parameter: per-cell source density
        self.source_energy = None
        self.neu_flow = None  # Parameter: external Neumann mass flux
        self.neu_energy = None


class _InterfaceWork:
    def __init__(self):
        self.nu = None  # interface specific volume (trace of primary's)
        self.perm = None  # inherited from secondary
        self.conductivity = None
        self.areas = None
        self.upwind = None  # InterfaceUpwind
        self.rho_up = None  # node: upwinded interface density
        self.mass_flux = None  # node: nu * rho_up * lambda * area
        self.vol_flux = None  # node: nu * lambda * area
        self.cond_flux = None  # node: nu * q * area
        self.adv_energy_flux = None  # node: nu * w * area


class FlowEnergyModel:
    """Compressible single-phase flow, optionally coupled to heat transport.

    Apertures are fixed at the residual value; porosity is constant per
    subdomain. Fracture permeability follows the cubic law from the aperture
    unless overridden; intersections average the permeabilities and apertures
    of their higher-dimensional neighbours.

    Subclasses override the ``bc_type_*``, ``bc_values_*``, ``source_*`` and
    ``initial_*`` hooks to define a scenario.
    """

    def __init__(
        self,
        mdg: MixedDimensionalGrid,
        params: MaterialParams,
        include_energy: bool = True,
    ):
        self.mdg = mdg
        self.params = params.validate()
        self.include_energy = include_energy
        if params.fluid.vogel is not None and not include_energy:
            raise TemperatureBelowVogelCutoff(
                "temperature-dependent viscosity requires the energy model"
            )
        self.proj = build_projections(mdg)
        self.sys = EquationSystem()
        self.dt_param = Parameter("dt", 1.0)
        self.time = 0.0
        self._sub = {}
        self._intf = {}
        self._prepared = False

    # Scenario hooks ----------------------------------------------------------

    def bc_type_flow(self, g) -> fvm.BoundaryCondition:
        return fvm.BoundaryCondition(g, dirichlet_faces="all")

    def bc_type_energy(self, g) -> fvm.BoundaryCondition:
        return fvm.BoundaryCondition(g, dirichlet_faces="all")

    def bc_values_flow(self, g, t):
        """Per-face values: pressure on Dirichlet faces, outward mass flux on
        Neumann faces."""
        vals = np.zeros(g.num_faces)
        vals[self._sub[g].bc_flow.is_dirichlet] = self.params.reference_pressure
        return vals

    def bc_values_energy(self, g, t):
        vals = np.zeros(g.num_faces)
        vals[self._sub[g].bc_energy.is_dirichlet] = (
            self.params.reference_temperature
        )
        return vals

    def source_flow(self, g, t):
        """Mass source density per cell (integrated against cell volumes)."""
        return np.zeros(g.num_cells)

    def source_energy(self, g, t):
        return np.zeros(g.num_cells)

    def initial_pressure(self, g):
        return np.full(g.num_cells, self.params.reference_pressure)

    def initial_temperature(self, g):
        return np.full(g.num_cells, self.params.reference_temperature)

    # Setup ---------------------------------------------------------------

    def prepare(self):
        """Register variables, build discretizations, graphs and equations."""
        mdg, sys_, params = self.mdg, self.sys, self.params
        N = mdg.ambient_dim

        self.pressure = sys_.register_variable("pressure", mdg.subdomains)
        if self.include_energy:
            self.temperature = sys_.register_variable(
                "temperature", mdg.subdomains
            )
        else:
            self.temperature = None
        if mdg.interfaces:
            self.interface_flux = sys_.register_variable(
                "interface_flux", mdg.interfaces
            )
            if self.include_energy:
                self.interface_enthalpy_flux = sys_.register_variable(
                    "interface_enthalpy_flux", mdg.interfaces
                )
                self.interface_heat_flux = sys_.register_variable(
                    "interface_heat_flux", mdg.interfaces
                )

        self._compute_properties()
        self._discretize()
        self._build_interface_nodes()
        self._build_boundary_nodes()
        self._build_subdomain_equations()
        self._build_interface_equations()
        self._apply_initial_conditions()
        sys_.validate_square()
        self.before_step(self.time)
        self._prepared = True
        return self

    def _compute_properties(self):
        mdg, params = self.mdg, self.params
        N = mdg.ambient_dim
        a0 = params.residual_aperture
        fracture_apertures = {
            g: np.full(g.num_cells, a0) for g in mdg.subdomains_of_dim(N - 1)
        }
        lower = (
            intersection_aperture(mdg, self.proj, fracture_apertures)
            if any(g.dim < N - 1 for g in mdg.subdomains)
            else {}
        )
        self.apertures = {**fracture_apertures, **lower}

        if params.fracture_permeability is not None:
            frac_perm = {
                g: np.full(g.num_cells, params.fracture_permeability)
                for g in mdg.subdomains_of_dim(N - 1)
            }
        else:
            frac_perm = {
                g: self.apertures[g] ** 2 / 12.0
                for g in mdg.subdomains_of_dim(N - 1)
            }

        for g in mdg.subdomains:
            w = self._sub.setdefault(g, _SubdomainWork())
            w.volumes = g.cell_volumes
            if g.dim == N:
                w.nu = np.ones(g.num_cells)
                w.phi = np.full(g.num_cells, params.solid.porosity)
                w.perm = np.full(g.num_cells, params.solid.permeability)
            else:
                w.nu = specific_volume(self.apertures[g], g.dim, N)
                w.phi = np.full(g.num_cells, params.fracture_porosity)
                if g.dim == N - 1:
                    w.perm = frac_perm[g]
                else:
                    # Average of the permeabilities of the intersecting
                    # higher-dimensional neighbours, projected cellwise.
                    contributions = []
                    for mg in mdg.interfaces_above(g):
                        pr = self.proj.for_interface(mg)
                        on_mortar = pr.primary_cell_to_mortar @ self._sub[
                            mg.primary
                        ].perm
                        for side in range(mg.num_sides):
                            contributions.append(
                                pr.side_restriction(side) @ on_mortar
                            )
                    w.perm = np.vstack(contributions).mean(axis=0)

        for mg in mdg.interfaces:
            iw = self._intf.setdefault(mg, _InterfaceWork())
            pr = self.proj.for_interface(mg)
            iw.nu = pr.primary_cell_to_mortar @ self._sub[mg.primary].nu
            iw.perm = pr.cell_to_mortar @ self._sub[mg.secondary].perm
            if self.include_energy:
                # Conductivity inherited from the lower-dimensional
                # neighbour's effective value.
                sec_cond = self._effective_conductivity(mg.secondary)
                iw.conductivity = pr.cell_to_mortar @ sec_cond
            iw.areas = mg.cell_volumes

    def _effective_conductivity(self, g):
        params = self.params
        w = self._sub[g]
        return effective_quantity(
            w.phi, params.fluid.conductivity, params.solid.conductivity
        )

    def _discretize(self):
        for g in self.mdg.subdomains:
            w = self._sub[g]
            w.bc_flow = self.bc_type_flow(g)
            if g.num_faces > 0:
                w.disc_flow = fvm.tpfa(g, w.nu * w.perm, w.bc_flow)
            if self.include_energy:
                w.bc_energy = self.bc_type_energy(g)
                if g.num_faces > 0:
                    w.disc_fourier = fvm.tpfa(
                        g, w.nu * self._effective_conductivity(g), w.bc_energy
                    )

    # Graph building ------------------------------------------------------

    def _p(self, g):
        return self.sys.restriction(self.pressure, [g])

    def _T(self, g):
        return self.sys.restriction(self.temperature, [g])

    def _lambda(self, mg):
        return self.sys.restriction(self.interface_flux, [mg])

    def _p_prev(self, g):
        return apply_map(
            self.sys.restriction(self.pressure, [g]).matrix,
            self.pressure.previous_timestep(),
        )

    def _T_prev(self, g):
        return apply_map(
            self.sys.restriction(self.temperature, [g]).matrix,
            self.temperature.previous_timestep(),
        )

    def _rho(self, g, previous=False):
        if previous:
            p = self._p_prev(g)
            T = self._T_prev(g) if self.include_energy else None
        else:
            p = self._p(g)
            T = self._T(g) if self.include_energy else None
        return fluid_density(p, T, self.params)

    def _build_interface_nodes(self):
        """Interface flux products shared by both sides of each coupling."""
        for mg in self.mdg.interfaces:
            iw = self._intf[mg]
            pr = self.proj.for_interface(mg)
            iw.upwind = coupling.InterfaceUpwind(pr)
            lam = self._lambda(mg)
            rho_up = iw.upwind.select(
                self._rho(mg.primary), self._rho(mg.secondary)
            )
            iw.rho_up = rho_up
            iw.vol_flux = Constant(iw.nu) * lam * Constant(iw.areas)
            iw.mass_flux = Constant(iw.nu) * rho_up * lam * Constant(iw.areas)
            if self.include_energy:
                w_var = self.sys.restriction(self.interface_enthalpy_flux, [mg])
                q_var = self.sys.restriction(self.interface_heat_flux, [mg])
                iw.cond_flux = Constant(iw.nu) * q_var * Constant(iw.areas)
                iw.adv_energy_flux = Constant(iw.nu) * w_var * Constant(iw.areas)

    def _build_boundary_nodes(self):
        """Per-face boundary value vectors as graphs, built once per grid.

        External data enters through parameters refreshed each step; faces
        created by fracture splitting carry the projected interface fluxes
        (volumetric for the flow problem, conductive for the heat problem).
        """
        for g in self.mdg.subdomains:
            w = self._sub[g]
            w.bvals_flow = Parameter(f"bc_flow[{g.name}]", np.zeros(g.num_faces))
            w.neu_flow = Parameter(f"neu_flow[{g.name}]", np.zeros(g.num_faces))
            node = w.bvals_flow
            for mg in self.mdg.interfaces_below(g):
                pr = self.proj.for_interface(mg)
                node = node + apply_map(
                    pr.mortar_to_face_scalar, self._intf[mg].vol_flux
                )
            w.bvals_flow_node = node
            if self.include_energy:
                w.bvals_energy = Parameter(
                    f"bc_energy[{g.name}]", np.zeros(g.num_faces)
                )
                w.neu_energy = Parameter(
                    f"neu_energy[{g.name}]", np.zeros(g.num_faces)
                )
                node_e = w.bvals_energy
                for mg in self.mdg.interfaces_below(g):
                    pr = self.proj.for_interface(mg)
                    node_e = node_e + apply_map(
                        pr.mortar_to_face_scalar, self._intf[mg].cond_flux
                    )
                w.bvals_energy_node = node_e

    def _build_subdomain_equations(self):
        params = self.params
        f = params.fluid
        for g in self.mdg.subdomains:
            w = self._sub[g]
            p = self._p(g)
            T = self._T(g) if self.include_energy else None
            rho = self._rho(g)
            rho_prev = self._rho(g, previous=True)
            w.rho = rho
            mu = fluid_viscosity(T, params)

            acc_coef = w.nu * w.phi * w.volumes
            w.acc_mass = (rho * Constant(acc_coef)
                          - rho_prev * Constant(acc_coef)) / self.dt_param
            residual = w.acc_mass

            if self.include_energy:
                h = fluid_enthalpy(T, params)
                T_prev = self._T_prev(g)
                h_prev = fluid_enthalpy(T_prev, params)
                p_prev = self._p_prev(g)
                u_f = fluid_internal_energy(h, p, rho)
                u_f_prev = fluid_internal_energy(h_prev, p_prev, rho_prev)
                u_s = solid_internal_energy(T, params)
                u_s_prev = solid_internal_energy(T_prev, params)
                rho_u = effective_quantity(
                    Constant(w.phi), rho * u_f, params.solid.density * u_s
                )
                rho_u_prev = effective_quantity(
                    Constant(w.phi),
                    rho_prev * u_f_prev,
                    params.solid.density * u_s_prev,
                )
                vol = Constant(w.nu * w.volumes)
                w.acc_energy = (rho_u * vol - rho_u_prev * vol) / self.dt_param
                residual_e = w.acc_energy

            if g.num_faces > 0:
                bvals_flow = w.bvals_flow_node
                bvals_energy = (
                    w.bvals_energy_node if self.include_energy else None
                )
                disc = w.disc_flow
                q_vol = apply_map(disc.flux_cell, p) + apply_map(
                    disc.flux_bound, bvals_flow
                )
                gvec = np.asarray(params.gravity, dtype=float)
                up0 = fvm.upwind(g, np.zeros(g.num_faces), w.bc_flow)
                if np.any(gvec):
                    gcoef = disc.gravity_coefficient(gvec)
                    w.gravity_upwind = LinearMap(
                        up0.face_values, rho, "gravity_upwind"
                    )
                    q_vol = q_vol + Constant(gcoef) * w.gravity_upwind
                w.q_vol = q_vol

                w.upwind_map = LinearMap(up0.face_values, rho / mu, "upwind")
                w.inflow_coef = Parameter(
                    f"inflow_flow[{g.name}]", np.zeros(g.num_faces)
                )
                face_coef = w.upwind_map + w.inflow_coef
                sign = _boundary_sign(g)
                neu_map = _diag_matrix(sign * w.bc_flow.is_neumann)
                mass_faces = face_coef * q_vol + apply_map(neu_map, w.neu_flow)
                for mg in self.mdg.interfaces_below(g):
                    pr = self.proj.for_interface(mg)
                    mass_faces = mass_faces + apply_map(
                        pr.mortar_to_face_flux, self._intf[mg].mass_flux
                    )
                w.mass_faces = mass_faces
                div = fvm.divergence(g)
                residual = residual + apply_map(div, mass_faces)

                if self.include_energy:
                    fo = w.disc_fourier
                    cond = apply_map(fo.flux_cell, T) + apply_map(
                        fo.flux_bound, bvals_energy
                    )
                    w.cond_flux_node = cond
                    upe = fvm.upwind(g, np.zeros(g.num_faces), w.bc_energy)
                    w.upwind_map_energy = LinearMap(
                        upe.face_values, h * rho / mu, "upwind_energy"
                    )
                    w.inflow_coef_energy = Parameter(
                        f"inflow_energy[{g.name}]", np.zeros(g.num_faces)
                    )
                    face_coef_e = w.upwind_map_energy + w.inflow_coef_energy
                    sign_e = _boundary_sign(g)
                    neu_map_e = _diag_matrix(sign_e * w.bc_energy.is_neumann)
                    energy_faces = (
                        face_coef_e * q_vol
                        + cond
                        + apply_map(neu_map_e, w.neu_energy)
                    )
                    for mg in self.mdg.interfaces_below(g):
                        pr = self.proj.for_interface(mg)
                        iw = self._intf[mg]
                        energy_faces = energy_faces + apply_map(
                            pr.mortar_to_face_flux, iw.adv_energy_flux
                        )
                    w.energy_faces = energy_faces
                    residual_e = residual_e + apply_map(div, energy_faces)

            for mg in self.mdg.interfaces_above(g):
                pr = self.proj.for_interface(mg)
                iw = self._intf[mg]
                residual = residual - apply_map(pr.mortar_to_cell, iw.mass_flux)
                if self.include_energy:
                    residual_e = residual_e - apply_map(
                        pr.mortar_to_cell, iw.adv_energy_flux + iw.cond_flux
                    )

            w.source_flow = Parameter(
                f"source_flow[{g.name}]", np.zeros(g.num_cells)
            )
            residual = residual - w.source_flow * Constant(w.volumes)
            self.sys.set_equation(f"mass[{g.name}]", residual, g.num_cells)

            if self.include_energy:
                w.source_energy = Parameter(
                    f"source_energy[{g.name}]", np.zeros(g.num_cells)
                )
                residual_e = residual_e - w.source_energy * Constant(w.volumes)
                self.sys.set_equation(
                    f"energy[{g.name}]", residual_e, g.num_cells
                )

    def _build_interface_equations(self):
        params = self.params
        for mg in self.mdg.interfaces:
            iw = self._intf[mg]
            pr = self.proj.for_interface(mg)
            gh, gl = mg.primary, mg.secondary
            wh, wl = self._sub[gh], self._sub[gl]
            if wh.disc_flow is None:
                raise MissingDiscretization(
                    f"{mg.name}: flow discretization of {gh.name} missing"
                )
            lam = self._lambda(mg)

            # Viscosity on the interface: upwinded when temperature-dependent.
            if params.fluid.vogel is None:
                mobility = Constant(iw.perm / params.fluid.viscosity)
            else:
                mu_h = fluid_viscosity(self._T(gh), params)
                mu_l = fluid_viscosity(self._T(gl), params)
                mu_up = iw.upwind.select(mu_h, mu_l)
                mobility = Constant(iw.perm) / mu_up

            trace_p = coupling.potential_trace(
                wh.disc_flow, self._p(gh), wh.bvals_flow_node
            )
            gvec = np.asarray(params.gravity, dtype=float)
            if np.any(gvec):
                g_normal = _interface_gravity_normal(mg, gvec)
                lam_rhs = coupling.interface_darcy_map(
                    pr, self.apertures[gl], mobility, self._p(gl), trace_p,
                    gravity_normal=g_normal, gravity_density=iw.rho_up,
                )
            else:
                lam_rhs = coupling.interface_darcy_map(
                    pr, self.apertures[gl], mobility, self._p(gl), trace_p
                )
            self.sys.set_equation(
                f"darcy[{mg.name}]", lam - lam_rhs, mg.num_cells
            )

            if self.include_energy:
                if wh.disc_fourier is None:
                    raise MissingDiscretization(
                        f"{mg.name}: heat discretization of {gh.name} missing"
                    )
                w_var = self.sys.restriction(self.interface_enthalpy_flux, [mg])
                q_var = self.sys.restriction(self.interface_heat_flux, [mg])
                h_rho_h = fluid_enthalpy(self._T(gh), params) * self._rho(gh)
                h_rho_l = fluid_enthalpy(self._T(gl), params) * self._rho(gl)
                w_rhs = coupling.interface_advective_map(
                    iw.upwind, h_rho_h, h_rho_l, lam
                )
                self.sys.set_equation(
                    f"enthalpy[{mg.name}]", w_var - w_rhs, mg.num_cells
                )
                trace_T = coupling.potential_trace(
                    wh.disc_fourier, self._T(gh), wh.bvals_energy_node
                )
                q_rhs = coupling.interface_fourier_map(
                    pr, self.apertures[gl], Constant(iw.conductivity),
                    self._T(gl), trace_T,
                )
                self.sys.set_equation(
                    f"fourier[{mg.name}]", q_var - q_rhs, mg.num_cells
                )

    def _apply_initial_conditions(self):
        for g in self.mdg.subdomains:
            self.sys.set_state(self.pressure, self.initial_pressure(g), [g])
            if self.include_energy:
                self.sys.set_state(
                    self.temperature, self.initial_temperature(g), [g]
                )
        self.sys.shift_time()
        self.sys.shift_iterate()

    # Step hooks used by the solver ----------------------------------------

    def set_dt(self, dt):
        self.dt_param.set(float(dt))

    def before_step(self, t_new):
        """Refresh time-dependent data; backward Euler evaluates data at the
        end of the step."""
        self.time = t_new
        for g in self.mdg.subdomains:
            w = self._sub[g]
            flow_vals = np.asarray(self.bc_values_flow(g, t_new), dtype=float)
            dir_vals = np.where(w.bc_flow.is_dirichlet, flow_vals, 0.0)
            neu_vals = np.where(w.bc_flow.is_neumann, flow_vals, 0.0)
            neu_vals[g.tags["tip"]] = 0.0
            w.bvals_flow.set(dir_vals)
            w.neu_flow.set(neu_vals)
            w.source_flow.set(np.asarray(self.source_flow(g, t_new), dtype=float))
            if self.include_energy:
                evals = np.asarray(self.bc_values_energy(g, t_new), dtype=float)
                w.bvals_energy.set(np.where(w.bc_energy.is_dirichlet, evals, 0.0))
                neu_e = np.where(w.bc_energy.is_neumann, evals, 0.0)
                neu_e[g.tags["tip"]] = 0.0
                w.neu_energy.set(neu_e)
                w.source_energy.set(
                    np.asarray(self.source_energy(g, t_new), dtype=float)
                )
        self.refresh_lagged()

    def refresh_lagged(self):
        """Recompute lagged snapshots: upwind directions and inflow data."""
        params = self.params
        for g in self.mdg.subdomains:
            w = self._sub[g]
            if g.num_faces == 0:
                continue
            flux = evaluate(w.q_vol, self.sys)
            flux_val = flux.val if hasattr(flux, "val") else np.asarray(flux)
            up = fvm.upwind(g, flux_val, w.bc_flow)
            w.upwind_map.set_matrix(up.face_values)

            # Advected coefficient entering at inflow Dirichlet faces,
            # computed from the boundary pressure/temperature values. Values
            # on non-Dirichlet faces are placeholders; default them to the
            # reference state so property laws stay in their domains.
            p_b = np.where(
                w.bc_flow.is_dirichlet,
                w.bvals_flow.value,
                params.reference_pressure,
            )
            if self.include_energy:
                T_b = np.where(
                    w.bc_energy.is_dirichlet,
                    w.bvals_energy.value,
                    params.reference_temperature,
                )
                rho_b = _density_values(p_b, T_b, params)
                mu_b = _viscosity_values(T_b, params)
            else:
                rho_b = _density_values(p_b, None, params)
                mu_b = np.full(g.num_faces, params.fluid.viscosity)
            w.inflow_coef.set(up.inflow_bound @ (rho_b / mu_b))

            if hasattr(w, "gravity_upwind"):
                w.gravity_upwind.set_matrix(up.face_values)

            if self.include_energy:
                upe = fvm.upwind(g, flux_val, w.bc_energy)
                w.upwind_map_energy.set_matrix(upe.face_values)
                h_b = params.fluid.heat_capacity * (
                    T_b - params.reference_temperature
                )
                w.inflow_coef_energy.set(
                    upe.inflow_bound @ (h_b * rho_b / mu_b)
                )

        for mg in self.mdg.interfaces:
            lam = self.sys.get_state(self.interface_flux, [mg])
            self._intf[mg].upwind.refresh(lam)

    # Diagnostics -----------------------------------------------------------

    def darcy_flux_values(self, g):
        """Current volumetric face fluxes on a subdomain."""
        out = evaluate(self._sub[g].q_vol, self.sys)
        return out.val if hasattr(out, "val") else np.asarray(out)

    def global_balances(self, dt):
        """Mass and energy closure over one converged step.

        Returns (mass_residual, energy_residual), each relative to the
        largest participating term; interface contributions cancel
        structurally, so the sums involve accumulation, external boundary
        fluxes and sources only.
        """
        mass_terms = []
        energy_terms = []
        for g in self.mdg.subdomains:
            w = self._sub[g]
            acc = evaluate(w.acc_mass, self.sys).val * dt
            src = w.source_flow.value * w.volumes * dt
            bnd = np.zeros(0)
            if g.num_faces > 0:
                sgn = _boundary_sign(g)
                ext = w.bc_flow.is_dirichlet | w.bc_flow.is_neumann
                faces = evaluate(w.mass_faces, self.sys).val
                bnd = (sgn * faces)[ext] * dt
            mass_terms.append((acc.sum(), bnd.sum(), src.sum()))
            if self.include_energy:
                acc_e = evaluate(w.acc_energy, self.sys).val * dt
                src_e = w.source_energy.value * w.volumes * dt
                bnd_e = np.zeros(0)
                if g.num_faces > 0:
                    sgn = _boundary_sign(g)
                    ext = w.bc_energy.is_dirichlet | w.bc_energy.is_neumann
                    faces_e = evaluate(w.energy_faces, self.sys).val
                    bnd_e = (sgn * faces_e)[ext] * dt
                energy_terms.append((acc_e.sum(), bnd_e.sum(), src_e.sum()))

        def closure(terms):
            acc = sum(t[0] for t in terms)
            bnd = sum(t[1] for t in terms)
            src = sum(t[2] for t in terms)
            scale = max(abs(acc), abs(bnd), abs(src), 1e-30)
            return (acc + bnd - src) / scale

        mass_res = closure(mass_terms)
        energy_res = closure(energy_terms) if self.include_energy else 0.0
        return mass_res, energy_res


# Helpers ---------------------------------------------------------------------


def _diag_matrix(values):
    return sps.diags(np.asarray(values, dtype=float)).tocsr()


def _boundary_sign(g):
    """Per face: incidence sign of the single cell on boundary faces, else 0."""
    cf = g.cell_faces.tocsr()
    sign = np.zeros(g.num_faces)
    counts = np.diff(cf.indptr)
    one = counts == 1
    sums = np.asarray(cf.sum(axis=1)).ravel()
    sign[one] = sums[one]
    return sign


def _interface_gravity_normal(mg, gvec):
    """Gravity component along the primary-to-secondary direction per mortar cell."""
    gh = mg.primary
    out = np.zeros(mg.num_cells)
    pos = 0
    for faces, signs in zip(mg.side_faces, mg.side_signs):
        normals = gh.face_normals[faces]
        areas = gh.face_areas[faces][:, None]
        unit = normals / areas
        out[pos : pos + faces.size] = signs * (
            unit[:, : len(gvec)] @ np.asarray(gvec, dtype=float)
        )
        pos += faces.size
    return out


def _density_values(p, T, params: MaterialParams):
    f = params.fluid
    arg = f.compressibility * (p - params.reference_pressure)
    if T is not None:
        arg = arg - f.thermal_expansion * (T - params.reference_temperature)
    return f.reference_density * np.exp(arg)


def _viscosity_values(T, params: MaterialParams):
    f = params.fluid
    if f.vogel is None:
        return np.full(np.shape(T) or (1,), f.viscosity)
    mu_a, mu_b, mu_c = f.vogel
    shifted = np.asarray(T, dtype=float) - mu_c
    if np.any(shifted <= 0):
        raise TemperatureBelowVogelCutoff(
            "boundary temperature at or below the viscosity cutoff"
        )
    return mu_a * np.exp(mu_b / shifted)
