from mdflow.ad.forward import (
    BINARY_OPS,
    COMBINATION_TABLE,
    OPERAND_KINDS,
    AdArray,
    combine,
    operand_kind,
)
from mdflow.ad.operators import (
    BinaryOp,
    Constant,
    Function,
    LinearMap,
    OperatorNode,
    Parameter,
    PreviousIteration,
    PreviousTimestep,
    Variable,
    apply_function,
    apply_map,
    assert_acyclic,
    dump_tree,
    evaluate,
    exp,
    log,
)
from mdflow.ad.system import EquationSystem

__all__ = [
    "AdArray",
    "combine",
    "operand_kind",
    "COMBINATION_TABLE",
    "BINARY_OPS",
    "OPERAND_KINDS",
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
    "EquationSystem",
]
