"""Variable registry, global dof ordering and residual/Jacobian assembly."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sps

from mdflow.errors import (
    DuplicateVariable,
    NonSquareSystem,
    NumericalBreakdown,
    ShapeMismatch,
    UnknownVariable,
)
from mdflow.ad.forward import AdArray
from mdflow.ad.operators import Variable, apply_map, assert_acyclic, evaluate

__all__ = ["EquationSystem"]


class EquationSystem:
    """Holds variables, their dof layout, state vectors and named equations.

    Dof blocks are allocated contiguously in registration order, grid by grid
    within each variable. Three state vectors are kept: current, previous
    time step and previous nonlinear iteration.
    """

    def __init__(self):
        self._variables = {}
        self._dof_slices = {}  # (var name, grid id-key) -> slice into globals
        self._var_dofs = {}  # var name -> global index array
        self.total_dofs = 0
        self.state = np.zeros(0)
        self.state_prev_time = np.zeros(0)
        self.state_prev_iter = np.zeros(0)
        self._equations = {}  # name -> (node, rows)

    # Variables -------------------------------------------------------------

    def register_variable(self, name, grids, dofs_per_cell=1) -> Variable:
        if name in self._variables:
            raise DuplicateVariable(f"variable {name!r} already registered")
        grids = list(grids)
        if not grids:
            raise UnknownVariable(f"variable {name!r} needs at least one grid")
        var = Variable(name, grids, dofs_per_cell)
        start = self.total_dofs
        idx = []
        for g in grids:
            n = g.num_cells * dofs_per_cell
            self._dof_slices[(name, id(g))] = slice(start, start + n)
            idx.append(np.arange(start, start + n))
            start += n
        self._var_dofs[name] = np.concatenate(idx)
        added = start - self.total_dofs
        self.total_dofs = start
        self.state = np.concatenate([self.state, np.zeros(added)])
        self.state_prev_time = np.concatenate(
            [self.state_prev_time, np.zeros(added)]
        )
        self.state_prev_iter = np.concatenate(
            [self.state_prev_iter, np.zeros(added)]
        )
        self._variables[name] = var
        return var

    def variable(self, name) -> Variable:
        try:
            return self._variables[name]
        except KeyError:
            raise UnknownVariable(f"variable {name!r} is not registered")

    def _check_registered(self, var):
        if self._variables.get(var.name) is not var:
            raise UnknownVariable(
                f"variable {var.name!r} does not belong to this system"
            )

    def dofs_of(self, var, grids=None):
        """Global dof indices of a variable, optionally on a subset of grids."""
        self._check_registered(var)
        if grids is None:
            return self._var_dofs[var.name]
        idx = []
        for g in grids:
            sl = self._dof_slices.get((var.name, id(g)))
            if sl is None:
                raise UnknownVariable(
                    f"variable {var.name!r} is not defined on grid {g!r}"
                )
            idx.append(np.arange(sl.start, sl.stop))
        return np.concatenate(idx) if idx else np.zeros(0, dtype=int)

    def restriction(self, var, grids):
        """Graph node: the variable restricted to the given grids."""
        self._check_registered(var)
        rows_idx = []
        offset = {}
        pos = 0
        for g in var.grids:
            n = g.num_cells * var.dofs_per_cell
            offset[id(g)] = pos
            pos += n
        for g in grids:
            if id(g) not in offset:
                raise UnknownVariable(
                    f"variable {var.name!r} is not defined on grid {g!r}"
                )
            n = g.num_cells * var.dofs_per_cell
            rows_idx.append(np.arange(offset[id(g)], offset[id(g)] + n))
        cols = np.concatenate(rows_idx) if rows_idx else np.zeros(0, dtype=int)
        mat = sps.csr_matrix(
            (np.ones(cols.size), (np.arange(cols.size), cols)),
            shape=(cols.size, pos),
        )
        return apply_map(mat, var, name=f"{var.name}|restricted")

    # State -----------------------------------------------------------------

    def set_state(self, var, values, grids=None, which="current"):
        target = {
            "current": self.state,
            "previous_time": self.state_prev_time,
            "previous_iteration": self.state_prev_iter,
        }[which]
        idx = self.dofs_of(var, grids)
        target[idx] = np.broadcast_to(np.asarray(values, dtype=float), idx.shape)

    def get_state(self, var, grids=None, which="current"):
        source = {
            "current": self.state,
            "previous_time": self.state_prev_time,
            "previous_iteration": self.state_prev_iter,
        }[which]
        return source[self.dofs_of(var, grids)].copy()

    def shift_time(self):
        """Copy the current state into the previous-timestep snapshot."""
        self.state_prev_time[:] = self.state

    def shift_iterate(self):
        """Copy the current state into the previous-iteration snapshot."""
        self.state_prev_iter[:] = self.state

    # Node evaluation hooks ---------------------------------------------------

    def variable_value(self, var) -> AdArray:
        self._check_registered(var)
        idx = self._var_dofs[var.name]
        jac = sps.csr_matrix(
            (np.ones(idx.size), (np.arange(idx.size), idx)),
            shape=(idx.size, self.total_dofs),
        )
        return AdArray(self.state[idx].copy(), jac)

    def previous_time_value(self, var) -> AdArray:
        self._check_registered(var)
        idx = self._var_dofs[var.name]
        n = idx.size
        return AdArray(
            self.state_prev_time[idx].copy(),
            sps.csr_matrix((n, self.total_dofs)),
        )

    def previous_iteration_value(self, var) -> AdArray:
        self._check_registered(var)
        idx = self._var_dofs[var.name]
        n = idx.size
        return AdArray(
            self.state_prev_iter[idx].copy(),
            sps.csr_matrix((n, self.total_dofs)),
        )

    # Equations ---------------------------------------------------------------

    def set_equation(self, name, node, rows):
        """Register a named residual; rows must match the evaluated length."""
        assert_acyclic(node)
        self._equations[name] = (node, int(rows))

    @property
    def equation_names(self):
        return list(self._equations)

    def equation_rows(self):
        """Row slices of each equation in the assembled residual."""
        out = {}
        pos = 0
        for name, (_, rows) in self._equations.items():
            out[name] = slice(pos, pos + rows)
            pos += rows
        return out

    def validate_square(self):
        rows = sum(r for (_, r) in self._equations.values())
        if rows != self.total_dofs:
            raise NonSquareSystem(
                f"{rows} equation rows against {self.total_dofs} dofs"
            )

    def assemble(self):
        """Evaluate all equations; returns (residual, Jacobian).

        Residual blocks are stacked in registration order; Jacobian columns
        follow the global dof ordering.
        """
        self.validate_square()
        vals = []
        jacs = []
        for name, (node, rows) in self._equations.items():
            res = evaluate(node, self)
            if isinstance(res, AdArray):
                v, j = res.val, res.jac
            else:
                v = np.atleast_1d(np.asarray(res, dtype=float))
                j = sps.csr_matrix((v.size, self.total_dofs))
            if v.size != rows:
                raise ShapeMismatch(
                    f"equation {name!r} evaluated to {v.size} rows, "
                    f"declared {rows}"
                )
            if not np.all(np.isfinite(v)):
                raise NumericalBreakdown(
                    f"non-finite residual in equation {name!r}"
                )
            vals.append(v)
            jacs.append(j)
        residual = np.concatenate(vals) if vals else np.zeros(0)
        jacobian = (
            sps.vstack(jacs, format="csr")
            if jacs
            else sps.csr_matrix((0, self.total_dofs))
        )
        return residual, jacobian
