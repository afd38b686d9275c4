"""Range consistent answers to aggregation queries over inconsistent
databases, computed with weighted partial MaxSAT."""
from __future__ import annotations

__version__ = "0.1.0"

from .data_io import GeneratorConfig, load_instance, load_schema, parse_schema, write_instance
from .engine import (
    EngineOptions,
    GroupedRangeAnswers,
    RangeAnswer,
    consistent_answers_ucq,
    encode_query,
    range_answer_scalar,
    range_answers,
    range_answers_grouped,
)
from .oracle import enumerate_repairs, oracle_range_answer
from .query import AggOp, AggQuery, UnionQuery, parse_query
from .relational import Instance, Schema
from .sat import SolverConfig, solve_wpmaxsat

__all__ = [
    "AggOp", "AggQuery", "EngineOptions", "GeneratorConfig", "GroupedRangeAnswers", "Instance", "RangeAnswer",
    "Schema", "SolverConfig", "UnionQuery", "consistent_answers_ucq", "encode_query", "enumerate_repairs",
    "load_instance", "load_schema", "oracle_range_answer", "parse_query", "parse_schema", "range_answer_scalar",
    "range_answers", "range_answers_grouped", "solve_wpmaxsat", "write_instance",
]
