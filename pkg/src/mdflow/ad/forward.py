"""Forward-mode AD values and the binary-combination rules.

An AdArray pairs a dense value vector with a sparse Jacobian with respect to
the global dof vector. Binary operations between operand kinds (scalar, dense
1-D array, sparse matrix, AdArray) are defined by an explicit table; any
combination not in the table raises UnsupportedCombination. Elementwise
multiplication of two AdArrays follows the product rule; matrix
multiplication differentiates through the right operand only, so the left
operand must be a constant sparse matrix.
"""

from __future__ import annotations

import numbers

import numpy as np
import scipy.sparse as sps

from mdflow.errors import ShapeMismatch, UnsupportedCombination

__all__ = [
    "AdArray",
    "combine",
    "operand_kind",
    "COMBINATION_TABLE",
    "BINARY_OPS",
    "OPERAND_KINDS",
]

BINARY_OPS = ("add", "sub", "mul", "div", "pow", "matmul")
OPERAND_KINDS = ("scalar", "dense", "sparse", "ad")

# Allowed (left kind, right kind) pairs per operation. Everything else raises.
_ALLOWED = {
    "add": {
        ("scalar", "scalar"), ("scalar", "dense"), ("dense", "scalar"),
        ("dense", "dense"), ("sparse", "sparse"),
        ("scalar", "ad"), ("ad", "scalar"), ("dense", "ad"), ("ad", "dense"),
        ("ad", "ad"),
    },
    "mul": {
        ("scalar", "scalar"), ("scalar", "dense"), ("dense", "scalar"),
        ("dense", "dense"), ("scalar", "sparse"), ("sparse", "scalar"),
        ("scalar", "ad"), ("ad", "scalar"), ("dense", "ad"), ("ad", "dense"),
        ("ad", "ad"),
    },
    "div": {
        ("scalar", "scalar"), ("scalar", "dense"), ("dense", "scalar"),
        ("dense", "dense"), ("sparse", "scalar"),
        ("scalar", "ad"), ("ad", "scalar"), ("dense", "ad"), ("ad", "dense"),
        ("ad", "ad"),
    },
    "pow": {
        ("scalar", "scalar"), ("scalar", "dense"), ("dense", "scalar"),
        ("dense", "dense"), ("ad", "scalar"),
    },
    "matmul": {
        ("sparse", "sparse"), ("sparse", "dense"), ("dense", "dense"),
        ("sparse", "ad"),
    },
}
_ALLOWED["sub"] = set(_ALLOWED["add"])

COMBINATION_TABLE = {
    (lk, rk, op): (lk, rk) in _ALLOWED[op]
    for op in BINARY_OPS
    for lk in OPERAND_KINDS
    for rk in OPERAND_KINDS
}


def operand_kind(x):
    if isinstance(x, AdArray):
        return "ad"
    if isinstance(x, numbers.Real) and not isinstance(x, bool):
        return "scalar"
    if sps.issparse(x):
        return "sparse"
    if isinstance(x, np.ndarray):
        if x.ndim == 0:
            return "scalar"
        if x.ndim == 1:
            return "dense"
        raise UnsupportedCombination(
            f"dense operands must be 1-D, got ndim={x.ndim}"
        )
    raise UnsupportedCombination(f"unsupported operand type {type(x).__name__}")


class AdArray:
    """A value vector together with its sparse Jacobian.

    The Jacobian has one row per value entry and one column per global dof.
    """

    __array_ufunc__ = None  # keep numpy from broadcasting over us
    __array_priority__ = 100.0

    def __init__(self, val, jac):
        val = np.atleast_1d(np.asarray(val, dtype=float))
        if val.ndim != 1:
            raise ShapeMismatch("AdArray values must be 1-D")
        if not sps.issparse(jac):
            raise ShapeMismatch("AdArray Jacobian must be a sparse matrix")
        if jac.shape[0] != val.size:
            raise ShapeMismatch(
                f"Jacobian has {jac.shape[0]} rows for {val.size} values"
            )
        self.val = val
        self.jac = jac.tocsr()

    @property
    def size(self):
        return self.val.size

    @property
    def num_dofs(self):
        return self.jac.shape[1]

    def copy(self):
        return AdArray(self.val.copy(), self.jac.copy())

    def __repr__(self):
        return f"AdArray(size={self.size}, dofs={self.num_dofs})"

    # Arithmetic sugar; all semantics live in combine().
    def __add__(self, other):
        return combine(self, "add", other)

    def __radd__(self, other):
        return combine(other, "add", self)

    def __sub__(self, other):
        return combine(self, "sub", other)

    def __rsub__(self, other):
        return combine(other, "sub", self)

    def __mul__(self, other):
        return combine(self, "mul", other)

    def __rmul__(self, other):
        return combine(other, "mul", self)

    def __truediv__(self, other):
        return combine(self, "div", other)

    def __rtruediv__(self, other):
        return combine(other, "div", self)

    def __pow__(self, other):
        return combine(self, "pow", other)

    def __rpow__(self, other):
        return combine(other, "pow", self)

    def __matmul__(self, other):
        return combine(self, "matmul", other)

    def __rmatmul__(self, other):
        return combine(other, "matmul", self)

    def __neg__(self):
        return AdArray(-self.val, -self.jac)


def _as_value(x):
    """Coerce scalar-kind operands to float, leave the rest untouched."""
    if isinstance(x, np.ndarray) and x.ndim == 0:
        return float(x)
    return x


def _broadcast_dense(d, n):
    d = np.asarray(d, dtype=float)
    if d.size == n:
        return d
    if d.size == 1:
        return np.full(n, d.ravel()[0])
    raise ShapeMismatch(f"dense operand of size {d.size} against {n} values")


def _diag(v):
    return sps.diags(v)


def combine(left, op, right):
    """Combine two operands under a binary operation.

    Defined combinations return the exact value (and Jacobian where an
    AdArray is involved); undefined ones raise UnsupportedCombination.
    """
    if op not in BINARY_OPS:
        raise UnsupportedCombination(f"unknown binary operation {op!r}")
    lk = operand_kind(left)
    rk = operand_kind(right)
    if not COMBINATION_TABLE[(lk, rk, op)]:
        raise UnsupportedCombination(
            f"{op}({lk}, {rk}) is not a supported combination"
        )
    left = _as_value(left)
    right = _as_value(right)

    if lk != "ad" and rk != "ad":
        return _combine_plain(left, lk, op, right, rk)
    if op == "add":
        return _add(left, lk, right, rk, 1.0)
    if op == "sub":
        return _add(left, lk, right, rk, -1.0)
    if op == "mul":
        return _mul(left, lk, right, rk)
    if op == "div":
        return _div(left, lk, right, rk)
    if op == "pow":
        # Table admits only AdArray base with scalar exponent.
        c = float(right)
        v = left.val
        return AdArray(v**c, _diag(c * v ** (c - 1.0)) @ left.jac)
    # matmul with an AD operand: constant sparse matrix on the left.
    m = left
    a = right
    if m.shape[1] != a.size:
        raise ShapeMismatch(
            f"matmul of {m.shape} matrix against {a.size} values"
        )
    return AdArray(m @ a.val, (m @ a.jac).tocsr())


def _combine_plain(left, lk, op, right, rk):
    if op == "add":
        return left + right
    if op == "sub":
        return left - right
    if op == "mul":
        if lk == "sparse":
            return (left * right).tocsr()
        if rk == "sparse":
            return (right * left).tocsr()
        return left * right
    if op == "div":
        if lk == "sparse":
            return (left / right).tocsr()
        return left / right
    if op == "pow":
        return left**right
    # matmul
    if lk == "sparse" and rk == "sparse":
        return (left @ right).tocsr()
    if lk == "sparse":
        if left.shape[1] != right.size:
            raise ShapeMismatch(
                f"matmul of {left.shape} matrix against {right.size} values"
            )
        return left @ right
    if left.shape != right.shape:
        raise ShapeMismatch(
            f"matmul of dense vectors with shapes {left.shape}, {right.shape}"
        )
    return float(np.dot(left, right))


def _add(left, lk, right, rk, sign):
    if lk == "ad" and rk == "ad":
        if left.size != right.size:
            raise ShapeMismatch(
                f"add/sub of AdArrays with sizes {left.size}, {right.size}"
            )
        return AdArray(left.val + sign * right.val, left.jac + sign * right.jac)
    if lk == "ad":
        other = (
            right if rk == "scalar" else _broadcast_dense(right, left.size)
        )
        return AdArray(left.val + sign * other, left.jac.copy())
    other = left if lk == "scalar" else _broadcast_dense(left, right.size)
    return AdArray(other + sign * right.val, sign * right.jac)


def _mul(left, lk, right, rk):
    if lk == "ad" and rk == "ad":
        if left.size != right.size:
            raise ShapeMismatch(
                f"mul of AdArrays with sizes {left.size}, {right.size}"
            )
        return AdArray(
            left.val * right.val,
            _diag(right.val) @ left.jac + _diag(left.val) @ right.jac,
        )
    if lk != "ad":
        left, right = right, left
        lk, rk = "ad", lk
    if rk == "scalar":
        return AdArray(left.val * right, left.jac * right)
    other = _broadcast_dense(right, left.size)
    return AdArray(left.val * other, _diag(other) @ left.jac)


def _div(left, lk, right, rk):
    if lk == "ad" and rk == "ad":
        if left.size != right.size:
            raise ShapeMismatch(
                f"div of AdArrays with sizes {left.size}, {right.size}"
            )
        inv = 1.0 / right.val
        return AdArray(
            left.val * inv,
            _diag(inv) @ left.jac - _diag(left.val * inv * inv) @ right.jac,
        )
    if lk == "ad":
        if rk == "scalar":
            return AdArray(left.val / right, left.jac * (1.0 / right))
        other = _broadcast_dense(right, left.size)
        return AdArray(left.val / other, _diag(1.0 / other) @ left.jac)
    # constant / AdArray
    num = left if lk == "scalar" else _broadcast_dense(left, right.size)
    inv = 1.0 / right.val
    return AdArray(num * inv, _diag(-num * inv * inv) @ right.jac)
