"""Brute-force ground truth by enumerating every repair.

Key-only schemas enumerate the cartesian product of key-equal group choices.
With denial constraints the repairs are found by include/exclude search over
the facts, keeping consistent subsets that are maximal.

Query values are computed from the witnessing assignments of the full
instance: an assignment counts in a repair iff all of its facts are kept.
This path shares the join code with the engine but none of the encoding or
solver code.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import product
import numpy as np

from .engine import RangeAnswer
from .evaluation import assignments, decimal_places, minimal_violations, to_scaled
from .query import AggOp, AggQuery, UnionQuery, derive_witness_query, eval_expr
from .relational import Instance, key_equal_groups

DEFAULT_LIMIT = 1_000_000


class OracleLimitError(RuntimeError):
    pass


def repair_count_estimate(instance: Instance) -> int | None:
    """Exact repair count for key-only schemas; None when DCs are present."""
    if instance.schema.denial_constraints:
        return None
    n = 1
    for g in key_equal_groups(instance):
        n *= len(g.fact_ids)
    return n


def _dc_repairs(instance: Instance, limit: int) -> list[frozenset[int]]:
    violations = minimal_violations(instance)
    by_fact: dict[int, list[frozenset[int]]] = {}
    for v in violations:
        for f in v:
            by_fact.setdefault(f, []).append(v)
    n = len(instance)
    out: list[frozenset[int]] = []
    kept: set[int] = set()

    def closes_violation(f: int) -> bool:
        # some near-violation of f is fully kept
        return any(v - {f} <= kept for v in by_fact.get(f, ()))

    def rec(i: int):
        if i > n:
            # maximal iff every dropped fact would complete a violation
            for f in range(1, n + 1):
                if f not in kept and not closes_violation(f):
                    return
            out.append(frozenset(kept))
            if len(out) > limit:
                raise OracleLimitError(f"more than {limit} repairs")
            return
        if not closes_violation(i):
            kept.add(i)
            rec(i + 1)
            kept.discard(i)
        rec(i + 1)

    rec(1)
    return out


def enumerate_repairs(instance: Instance, limit: int = DEFAULT_LIMIT) -> list[frozenset[int]]:
    """Every repair as a set of fact ids."""
    est = repair_count_estimate(instance)
    if est is None:
        return _dc_repairs(instance, limit)
    if est > limit:
        raise OracleLimitError(f"{est} repairs exceed the limit of {limit}")
    groups = key_equal_groups(instance)
    in_group = {f for g in groups for f in g.fact_ids}
    fixed = [f.id for f in instance.facts if f.id not in in_group]
    return [frozenset(fixed).union(choice) for choice in product(*(g.fact_ids for g in groups))]


def repair_matrix(instance: Instance, limit: int = DEFAULT_LIMIT) -> np.ndarray:
    """Boolean matrix, one row per repair, column ``i`` for fact ``i`` (column 0 unused)."""
    n = len(instance)
    est = repair_count_estimate(instance)
    if est is None:
        reps = _dc_repairs(instance, limit)
        m = np.zeros((len(reps), n + 1), dtype=bool)
        for r, rep in enumerate(reps):
            m[r, list(rep)] = True
        return m
    if est > limit:
        raise OracleLimitError(f"{est} repairs exceed the limit of {limit}")
    m = np.ones((est, n + 1), dtype=bool)
    idx = np.arange(est)
    stride = 1
    for g in key_equal_groups(instance):
        size = len(g.fact_ids)
        if size == 1:
            continue
        choice = (idx // stride) % size
        for j, f in enumerate(g.fact_ids):
            m[:, f] = choice == j
        stride *= size
    return m


@dataclass
class _Rows:
    """Witnessing assignments of the full instance."""

    facts: list[tuple[int, ...]]
    values: list
    groups: list[tuple]


def _rows(q: UnionQuery, instance: Instance, n_group: int, value_pos: int | None) -> _Rows:
    rows = _Rows([], [], [])
    for cq in q.disjuncts:
        for fids, env in assignments(cq, instance):
            rows.facts.append(tuple(sorted(set(fids))))
            rows.groups.append(tuple(eval_expr(cq.head[p], env) for p in range(n_group)))
            rows.values.append(None if value_pos is None else eval_expr(cq.head[value_pos], env))
    return rows


def _presence(matrix: np.ndarray, facts: list[tuple[int, ...]]) -> np.ndarray:
    """repairs x assignments: assignment fully kept in the repair."""
    out = np.ones((matrix.shape[0], len(facts)), dtype=bool)
    for j, fs in enumerate(facts):
        col = out[:, j]
        for f in fs:
            col &= matrix[:, f]
    return out


def _aggregate(q: AggQuery, present: np.ndarray, values: list) -> list:
    """Per-repair aggregate value (None for MIN/MAX over nothing)."""
    n_rep = present.shape[0]
    if q.op is AggOp.COUNT_STAR or (q.op is AggOp.COUNT and not q.distinct):
        return [int(x) for x in present.sum(axis=1)]
    if q.distinct:
        distinct = sorted(set(values), key=lambda v: (isinstance(v, str), v))
        totals = [0] * n_rep
        for v in distinct:
            cols = [j for j, x in enumerate(values) if x == v]
            any_present = present[:, cols].any(axis=1)
            gain = 1 if q.op is AggOp.COUNT else v
            for r in np.nonzero(any_present)[0]:
                totals[r] += gain
        return totals
    if q.op is AggOp.SUM:
        scale = max((decimal_places(v) for v in values), default=0)
        scaled = np.array([to_scaled(v, scale) for v in values], dtype=object)
        sums = present.astype(object) @ scaled if len(values) else np.zeros(n_rep, dtype=object)
        return [Fraction(int(s), 10 ** scale) for s in sums]
    out = []
    order = sorted(range(len(values)), key=lambda j: values[j], reverse=q.op is AggOp.MAX)
    if not order:
        return [None] * n_rep
    ranked = present[:, order]
    has = ranked.any(axis=1)
    first = ranked.argmax(axis=1)
    for r in range(n_rep):
        out.append(values[order[first[r]]] if has[r] else None)
    return out


def _to_answer(q: AggQuery, poss: list, group_key: tuple | None) -> RangeAnswer:
    nonempty = [v for v in poss if v is not None]
    empty = len(nonempty) < len(poss)
    if not nonempty:
        return RangeAnswer(None, None, 0, True, group_key)
    lo, hi = min(nonempty), max(nonempty)
    if isinstance(lo, str) or isinstance(hi, str):
        raise TypeError("aggregate over text")
    scale = max(decimal_places(Fraction(lo)), decimal_places(Fraction(hi)))
    return RangeAnswer(to_scaled(lo, scale), to_scaled(hi, scale), scale,
                       empty if q.op in (AggOp.MIN, AggOp.MAX) else False, group_key)


def oracle_range_answer(q: AggQuery, instance: Instance, limit: int = DEFAULT_LIMIT):
    """RangeAnswer for scalar queries, or {group key: RangeAnswer} for groups
    present in every repair."""
    matrix = repair_matrix(instance, limit)
    ng = len(q.group_positions)
    q_star = derive_witness_query(q)
    rows = _rows(q_star, instance, ng, None if q.op is AggOp.COUNT_STAR else ng)
    present = _presence(matrix, rows.facts)
    if not q.grouped:
        return _to_answer(q, _aggregate(q, present, rows.values), None)
    out = {}
    keys = sorted(set(rows.groups), key=lambda k: tuple((isinstance(v, str), v) for v in k))
    for key in keys:
        cols = [j for j, g in enumerate(rows.groups) if g == key]
        sub = present[:, cols]
        if not sub.any(axis=1).all():
            continue
        out[key] = _to_answer(q, _aggregate(q, sub, [rows.values[j] for j in cols]), key)
    return out


def oracle_consistent_answers(q: UnionQuery, instance: Instance, limit: int = DEFAULT_LIMIT) -> set[tuple]:
    matrix = repair_matrix(instance, limit)
    rows = _rows(q, instance, q.arity, None)
    present = _presence(matrix, rows.facts)
    out = set()
    for key in set(rows.groups):
        cols = [j for j, g in enumerate(rows.groups) if g == key]
        if present[:, cols].any(axis=1).all():
            out.add(key)
    return out
