"""Graph-based vision pipelines: verification, optimization, execution and code generation.

Submodules ``verify`` and ``optimize`` hold the pass entry points of the same names.
"""
from .formats import DataKind, Desc, Format
from .graph import Context, DataObject, Graph, GraphError, OperatorNode
from .verify import Diagnostic, VerificationError, VerifiedGraph, lower
from .optimize import FusedPlan, eliminate_dead_nodes, plan_transfers
from .execute import Counters, ExecutionReport, run_naive, run_plan

__version__ = "0.1.0"

__all__ = [
    "Context", "Counters", "DataKind", "DataObject", "Desc", "Diagnostic", "ExecutionReport", "Format",
    "FusedPlan", "Graph", "GraphError", "OperatorNode", "VerificationError", "VerifiedGraph",
    "eliminate_dead_nodes", "lower", "plan_transfers", "run_naive", "run_plan",
]
