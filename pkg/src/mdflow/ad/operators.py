"""Symbolic operator graphs evaluated lazily into forward-mode AD values.

Nodes are immutable once built; arithmetic between nodes (or a node and a
plain operand) creates new nodes, so expressions read like the equations they
represent. Evaluation resolves the graph bottom-up against an equation
system's state, sharing results between reused subexpressions.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sps

from mdflow.errors import CyclicGraph, ShapeMismatch
from mdflow.ad.forward import AdArray, combine

__all__ = [
    "OperatorNode",
    "Variable",
    "PreviousTimestep",
    "PreviousIteration",
    "Constant",
    "Parameter",
    "BinaryOp",
    "Function",
    "LinearMap",
    "apply_function",
    "apply_map",
    "evaluate",
    "assert_acyclic",
    "dump_tree",
    "exp",
    "log",
]


def _wrap(x):
    if isinstance(x, OperatorNode):
        return x
    return Constant(x)


class OperatorNode:
    """Base node of a computational graph."""

    def __init__(self, children=(), name=""):
        self._children = tuple(children)
        self.name = name

    @property
    def children(self):
        return self._children

    def label(self):
        return self.name or type(self).__name__

    # Building arithmetic; semantics are delegated to forward.combine at
    # evaluation time, so graph and eager evaluation agree bit for bit.
    def __add__(self, other):
        return BinaryOp("add", self, _wrap(other))

    def __radd__(self, other):
        return BinaryOp("add", _wrap(other), self)

    def __sub__(self, other):
        return BinaryOp("sub", self, _wrap(other))

    def __rsub__(self, other):
        return BinaryOp("sub", _wrap(other), self)

    def __mul__(self, other):
        return BinaryOp("mul", self, _wrap(other))

    def __rmul__(self, other):
        return BinaryOp("mul", _wrap(other), self)

    def __truediv__(self, other):
        return BinaryOp("div", self, _wrap(other))

    def __rtruediv__(self, other):
        return BinaryOp("div", _wrap(other), self)

    def __pow__(self, other):
        return BinaryOp("pow", self, _wrap(other))

    def __rpow__(self, other):
        return BinaryOp("pow", _wrap(other), self)

    def __matmul__(self, other):
        return BinaryOp("matmul", self, _wrap(other))

    def __rmatmul__(self, other):
        return BinaryOp("matmul", _wrap(other), self)

    def __neg__(self):
        return BinaryOp("mul", Constant(-1.0), self)

    __array_ufunc__ = None
    __array_priority__ = 100.0

    def __repr__(self):
        return f"{type(self).__name__}({self.label()!r})"


class Variable(OperatorNode):
    """A primary unknown distributed over a set of grids.

    Created by EquationSystem.register_variable; evaluates to the current
    state over all its grids with an identity Jacobian block.
    """

    def __init__(self, name, grids, dofs_per_cell=1):
        super().__init__((), name=name)
        self.grids = list(grids)
        self.dofs_per_cell = int(dofs_per_cell)

    def previous_timestep(self):
        return PreviousTimestep(self)

    def previous_iteration(self):
        return PreviousIteration(self)


class PreviousTimestep(OperatorNode):
    """The variable's value at the previous time step; zero Jacobian."""

    def __init__(self, variable):
        super().__init__((), name=f"prev_time({variable.name})")
        self.variable = variable


class PreviousIteration(OperatorNode):
    """The variable's value at the previous nonlinear iteration; zero Jacobian."""

    def __init__(self, variable):
        super().__init__((), name=f"prev_iter({variable.name})")
        self.variable = variable


class Constant(OperatorNode):
    """A fixed scalar, dense vector or sparse matrix."""

    def __init__(self, value, name=""):
        super().__init__((), name=name)
        if isinstance(value, np.ndarray):
            value = np.asarray(value, dtype=float)
        self.value = value


class Parameter(OperatorNode):
    """A named constant whose value may be replaced between evaluations.

    Used for data that changes per time step or per nonlinear iteration
    (boundary values, sources, the step length) without rebuilding graphs.
    """

    def __init__(self, name, value):
        super().__init__((), name=name)
        self.set(value)

    def set(self, value):
        if isinstance(value, np.ndarray):
            value = np.asarray(value, dtype=float)
        self.value = value


class BinaryOp(OperatorNode):
    def __init__(self, op, left, right):
        super().__init__((left, right), name=op)
        self.op = op


class Function(OperatorNode):
    """Elementwise function application with analytic derivative."""

    def __init__(self, name, f, df, child):
        super().__init__((child,), name=name)
        self.f = f
        self.df = df


class LinearMap(OperatorNode):
    """Multiplication by a constant sparse matrix (a discretization map).

    The matrix reference may be swapped (e.g. lagged upwind directions are
    refreshed between nonlinear iterations); the matrices themselves are
    never mutated in place.
    """

    def __init__(self, matrix, child, name=""):
        super().__init__((child,), name=name or "linear_map")
        self.matrix = sps.csr_matrix(matrix)

    def set_matrix(self, matrix):
        self.matrix = sps.csr_matrix(matrix)


def apply_function(name, f, df, child) -> Function:
    """Wrap an elementwise function and its derivative as a graph node."""
    return Function(name, f, df, _wrap(child))


def apply_map(matrix, child, name="") -> LinearMap:
    """Apply a constant sparse matrix to a graph expression."""
    return LinearMap(matrix, _wrap(child), name=name)


def exp(child):
    return apply_function("exp", np.exp, np.exp, child)


def log(child):
    return apply_function("log", np.log, lambda v: 1.0 / v, child)


def evaluate(root, system):
    """Evaluate an operator graph against the system's current state.

    Returns an AdArray when the expression depends on variables, otherwise
    the plain evaluated value. Shared subexpressions are evaluated once.
    """
    assert_acyclic(root)
    cache = {}

    def rec(node):
        key = id(node)
        if key in cache:
            return cache[key]
        if isinstance(node, Variable):
            out = system.variable_value(node)
        elif isinstance(node, PreviousTimestep):
            out = system.previous_time_value(node.variable)
        elif isinstance(node, PreviousIteration):
            out = system.previous_iteration_value(node.variable)
        elif isinstance(node, (Constant, Parameter)):
            out = node.value
        elif isinstance(node, BinaryOp):
            out = combine(rec(node.children[0]), node.op, rec(node.children[1]))
        elif isinstance(node, Function):
            child = rec(node.children[0])
            if isinstance(child, AdArray):
                val = np.asarray(node.f(child.val), dtype=float)
                if val.shape != child.val.shape:
                    raise ShapeMismatch(
                        f"function {node.label()} changed the value shape"
                    )
                deriv = np.asarray(node.df(child.val), dtype=float)
                out = AdArray(val, sps.diags(deriv) @ child.jac)
            else:
                out = node.f(np.asarray(child, dtype=float))
        elif isinstance(node, LinearMap):
            out = combine(node.matrix, "matmul", rec(node.children[0]))
        else:
            raise TypeError(f"cannot evaluate node type {type(node).__name__}")
        cache[key] = out
        return out

    return rec(root)


def assert_acyclic(root):
    """Raise CyclicGraph if the graph reachable from root contains a cycle."""
    visiting = set()
    done = set()

    def rec(node):
        key = id(node)
        if key in done:
            return
        if key in visiting:
            raise CyclicGraph(f"cycle through node {node.label()!r}")
        visiting.add(key)
        for child in node.children:
            rec(child)
        visiting.discard(key)
        done.add(key)

    rec(root)


def dump_tree(root) -> str:
    """Debug rendering of a graph, one node per line, children indented."""
    lines = []

    def rec(node, depth):
        lines.append("  " * depth + node.label())
        for child in node.children:
            rec(child, depth + 1)

    rec(root, 0)
    return "\n".join(lines)
