"""End-to-end range consistent answers.

COUNT and SUM (with or without DISTINCT) go through one weighted partial
MaxSAT call per bound. MIN and MAX use a witness scan for one bound and a
sequence of SAT calls for the other. Grouped queries are answered group by
group after computing which groups are present in every repair.
"""
from __future__ import annotations

import functools
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Iterable, Sequence

from .encoding import (
    WcnfFormula,
    encode_count_sum,
    encode_denial,
    encode_distinct,
    encode_key_hard,
    minsat_transform,
)
from .evaluation import Witness, WitnessBag, minimal_violations, witness_bag
from .query import AggOp, AggQuery, UnionQuery, derive_witness_query, grouping_query
from .relational import Instance, key_equal_groups
from .sat import SatSolver, SolverConfig, SolverResult, Status, solve_sat, solve_wpmaxsat


class EngineError(RuntimeError):
    pass


class NoRepairError(EngineError):
    pass


class SolverFailure(EngineError):
    pass


@dataclass
class Stats:
    vars: int = 0
    clauses: int = 0
    soft: int = 0
    sat_calls: int = 0
    maxsat_calls: int = 0
    encode_ms: float = 0.0
    solve_ms: float = 0.0

    def add(self, other: "Stats") -> None:
        self.vars = max(self.vars, other.vars)
        self.clauses = max(self.clauses, other.clauses)
        self.soft = max(self.soft, other.soft)
        self.sat_calls += other.sat_calls
        self.maxsat_calls += other.maxsat_calls
        self.encode_ms += other.encode_ms
        self.solve_ms += other.solve_ms

    def as_dict(self) -> dict:
        return {"vars": self.vars, "clauses": self.clauses, "soft": self.soft, "sat_calls": self.sat_calls,
                "maxsat_calls": self.maxsat_calls, "encode_ms": round(self.encode_ms, 3),
                "solve_ms": round(self.solve_ms, 3)}


@dataclass
class RangeAnswer:
    """Bounds as scaled integers (divide by ``10**scale``). For MIN/MAX the
    bounds cover non-empty repairs only; both are None when no repair has a
    witness."""

    glb: int | None
    lub: int | None
    scale: int = 0
    empty_possible: bool = False
    group_key: tuple | None = None
    stats: Stats = field(default_factory=Stats)
    formula: WcnfFormula | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.glb is not None and self.lub is not None and self.glb > self.lub:
            raise EngineError(f"glb {self.glb} exceeds lub {self.lub}")

    def _logical(self, v):
        if v is None:
            return None
        if not isinstance(v, int) or self.scale == 0:
            return v
        f = Fraction(v, 10 ** self.scale)
        return f.numerator if f.denominator == 1 else f

    @property
    def glb_value(self):
        return self._logical(self.glb)

    @property
    def lub_value(self):
        return self._logical(self.lub)

    @property
    def interval(self) -> tuple:
        return self.glb_value, self.lub_value


@dataclass
class GroupedRangeAnswers:
    answers: list[RangeAnswer]
    stats: Stats = field(default_factory=Stats)

    def as_dict(self) -> dict:
        return {a.group_key: a.interval for a in self.answers}

    def __iter__(self):
        return iter(self.answers)

    def __len__(self):
        return len(self.answers)


@dataclass(frozen=True)
class EngineOptions:
    solver: SolverConfig = field(default_factory=SolverConfig)
    shortcut: bool = True
    binary_search: bool = False
    # order in which MIN witness values are excluded; "descending" is wrong
    # and exists only to demonstrate that
    min_order: str = "ascending"
    top_k_descending: bool = False
    jobs: int = 1
    keep_formula: bool = False
    # called with (kind, formula) for every formula handed to a solver
    wcnf_sink: Callable[[str, WcnfFormula], None] | None = field(default=None, compare=False)


# -- per-query preparation ----------------------------------------------------

class _Prepared:
    """Hard clauses and elision choices shared by every formula of one query."""

    def __init__(self, instance: Instance, relations: Iterable[str]):
        self.instance = instance
        schema = instance.schema
        self.dc_mode = bool(schema.denial_constraints)
        query_rels = {schema.relation(r).name for r in relations}
        if self.dc_mode:
            violations = minimal_violations(instance)
            relevant = _coupled_relations(instance, violations, query_rels)
            self.violations = [v for v in violations if instance.fact(next(iter(v))).relation in relevant]
            self.groups = []
        else:
            self.groups = [g for g in key_equal_groups(instance) if g.relation in query_rels]
            dirty = {g.relation for g in self.groups if not g.consistent}
            relevant = query_rels & dirty
            self.groups = [g for g in self.groups if g.relation in relevant]
            self.violations = None
        self.relevant = relevant
        self.elide = query_rels - relevant
        self.hard = WcnfFormula(len(instance))
        if self.dc_mode:
            facts = [f for r in sorted(relevant) for f in instance.relation_fact_ids(r)]
            encode_denial(self.violations, facts, self.hard)
        else:
            for c in encode_key_hard(self.groups):
                self.hard.add_hard(c)

    def base(self) -> WcnfFormula:
        return self.hard.copy()

    def min_base(self) -> WcnfFormula:
        """Hard side for the iterative MIN/MAX search (at-least-one only in key mode)."""
        if self.dc_mode:
            return self.hard.copy()
        f = WcnfFormula(len(self.instance))
        for c in encode_key_hard(self.groups, at_most_one=False):
            f.add_hard(c)
        return f

    def conflict_free(self, facts: frozenset[int]) -> bool:
        """Whether the facts can be extended to a repair."""
        if self.dc_mode:
            return not any(v <= facts for v in self.violations)
        seen = set()
        inst = self.instance
        for f in facts:
            fact = inst.fact(f)
            rel = inst.schema.relation(fact.relation)
            if not rel.has_key:
                continue
            key = (rel.name, tuple(fact.values[k] for k in rel.key))
            if key in seen:
                return False
            seen.add(key)
        return True


def _coupled_relations(instance: Instance, violations, query_rels: set[str]) -> set[str]:
    """Dirty relations connected to the query's relations through violations."""
    adj: dict[str, set[str]] = defaultdict(set)
    for v in violations:
        rels = {instance.fact(f).relation for f in v}
        for r in rels:
            adj[r] |= rels
    seen = {r for r in query_rels if r in adj}
    stack = list(seen)
    while stack:
        r = stack.pop()
        for s in adj[r]:
            if s not in seen:
                seen.add(s)
                stack.append(s)
    return seen


def _exclusion(w: Witness) -> tuple[int, ...]:
    return tuple(-f for f in sorted(w.fact_ids))


def _note_size(stats: Stats, formula: WcnfFormula) -> None:
    # SAT-only paths report the largest formula they solved
    stats.vars = max(stats.vars, formula.num_vars)
    stats.clauses = max(stats.clauses, formula.num_clauses)


class _Runner:
    def __init__(self, prepared: _Prepared, options: EngineOptions):
        self.prep = prepared
        self.opt = options

    # solver wrappers keep the statistics
    def maxsat(self, formula: WcnfFormula, stats: Stats) -> SolverResult:
        if self.opt.wcnf_sink:
            self.opt.wcnf_sink("maxsat", formula)
        t = time.perf_counter()
        res = solve_wpmaxsat(formula, self.opt.solver)
        stats.solve_ms += 1000 * (time.perf_counter() - t)
        stats.maxsat_calls += 1
        if res.status is Status.UNSAT:
            raise NoRepairError("hard clauses are unsatisfiable: no repair exists")
        if res.status is not Status.OPTIMUM:
            raise SolverFailure(f"MaxSAT solver returned {res.status.value}")
        return res

    def sat(self, formula: WcnfFormula, stats: Stats) -> bool:
        _note_size(stats, formula)
        if self.opt.wcnf_sink:
            self.opt.wcnf_sink("sat", formula)
        t = time.perf_counter()
        res = solve_sat(formula.num_vars, formula.hard, self.opt.solver)
        stats.solve_ms += 1000 * (time.perf_counter() - t)
        stats.sat_calls += 1
        if res.status is Status.UNKNOWN:
            raise SolverFailure("SAT solver returned UNKNOWN")
        return res.status is Status.SAT

    # COUNT / SUM ------------------------------------------------------------
    def count_sum(self, q: AggQuery, bag: WitnessBag) -> RangeAnswer:
        stats = Stats()
        op = q.op.value
        scale = 0 if q.op in (AggOp.COUNT, AggOp.COUNT_STAR) else bag.scale
        if self.opt.shortcut and all(w.consistent for w in bag.witnesses):
            v = direct_value(q, bag.witnesses)
            return RangeAnswer(v, v, scale, stats=stats)
        t = time.perf_counter()
        formula = self.prep.base()
        if q.distinct:
            art = encode_distinct(bag, "COUNT" if q.op is AggOp.COUNT else "SUM", formula)
        else:
            art = encode_count_sum(bag, op, formula)
        stats.encode_ms += 1000 * (time.perf_counter() - t)
        stats.vars, stats.clauses, stats.soft = formula.num_vars, formula.num_clauses, len(formula.soft)
        if not formula.soft:
            if not self.sat(formula, stats):
                raise NoRepairError("hard clauses are unsatisfiable: no repair exists")
            v = art.value(0)
            return RangeAnswer(v, v, scale, stats=stats, formula=formula if self.opt.keep_formula else None)
        res = self.maxsat(formula, stats)
        glb = art.value(res.satisfied_weight)
        t = time.perf_counter()
        neg, constant = minsat_transform(formula)
        stats.encode_ms += 1000 * (time.perf_counter() - t)
        res2 = self.maxsat(neg, stats)
        lub = art.value(constant - res2.satisfied_weight)
        return RangeAnswer(glb, lub, scale, stats=stats, formula=formula if self.opt.keep_formula else None)

    # MIN / MAX --------------------------------------------------------------
    def min_max(self, q: AggQuery, bag: WitnessBag) -> RangeAnswer:
        stats = Stats()
        witnesses = bag.witnesses
        if q.op is AggOp.MAX:
            witnesses = [replace(w, value=-w.value) for w in witnesses]
        glb, lub, empty = self.min_range(witnesses, stats)
        if q.op is AggOp.MAX:
            glb, lub = (None if lub is None else -lub), (None if glb is None else -glb)
        return RangeAnswer(glb, lub, bag.scale, empty, stats=stats)

    def min_range(self, witnesses: Sequence[Witness], stats: Stats) -> tuple[int | None, int | None, bool]:
        usable = [w for w in witnesses if self.prep.conflict_free(w.fact_ids)]
        if not usable:
            return None, None, True
        glb = min(w.value for w in usable)
        if self.opt.shortcut and all(w.consistent for w in witnesses):
            return glb, glb, False
        if any(w.consistent for w in witnesses):
            empty = False
        else:
            f = self.prep.base()
            for w in witnesses:
                f.add_hard(_exclusion(w))
            empty = self.sat(f, stats)
        if empty:
            lub = self.guarded_lub(witnesses, usable, stats)
        elif self.opt.binary_search:
            lub = self.iterative_lub_binary(witnesses, stats)
        else:
            lub = self.iterative_lub(witnesses, stats)
        return glb, lub, empty

    def _by_value(self, witnesses: Sequence[Witness]) -> dict[int, list[Witness]]:
        by_value: dict[int, list[Witness]] = defaultdict(list)
        for w in witnesses:
            by_value[w.value].append(w)
        return by_value

    def iterative_lub(self, witnesses: Sequence[Witness], stats: Stats) -> int:
        """Exclude witnesses value by value; the first value after which no
        repair avoids every excluded witness is the lub."""
        by_value = self._by_value(witnesses)
        values = sorted(by_value, reverse=self.opt.min_order == "descending")
        base = self.prep.min_base()
        solver = SatSolver(len(self.prep.instance), base.hard, self.opt.solver)
        for v in values:
            for w in by_value[v]:
                if w.consistent:
                    return v
                solver.add_clause(_exclusion(w))
                base.add_hard(_exclusion(w))
            _note_size(stats, base)
            if self.opt.wcnf_sink:
                self.opt.wcnf_sink("sat", base.copy())
            t = time.perf_counter()
            res = solver.solve()
            stats.solve_ms += 1000 * (time.perf_counter() - t)
            stats.sat_calls += 1
            if res.status is Status.UNKNOWN:
                raise SolverFailure("SAT solver returned UNKNOWN")
            if res.status is Status.UNSAT:
                return v
        return values[-1]

    def iterative_lub_binary(self, witnesses: Sequence[Witness], stats: Stats) -> int:
        by_value = self._by_value(witnesses)
        values = sorted(by_value)
        base = self.prep.min_base()

        def blocked(i: int) -> bool:
            f = base.copy()
            for v in values[:i + 1]:
                for w in by_value[v]:
                    if w.consistent:
                        return True
                    f.add_hard(_exclusion(w))
            return not self.sat(f, stats)

        lo, hi = 0, len(values) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if blocked(mid):
                hi = mid
            else:
                lo = mid + 1
        return values[lo]

    def guarded_lub(self, witnesses: Sequence[Witness], usable: Sequence[Witness], stats: Stats) -> int:
        """lub over non-empty repairs when some repair has no witness.

        For a candidate ``a`` (tried from the largest down) the formula asks
        for a repair that avoids every witness below ``a`` and contains some
        witness of value at least ``a``.
        """
        by_value = self._by_value(witnesses)
        values = sorted({w.value for w in usable}, reverse=True)
        for a in values:
            f = self.prep.base()
            for v, ws in by_value.items():
                if v < a:
                    for w in ws:
                        f.add_hard(_exclusion(w))
            guards = []
            for w in usable:
                if w.value < a:
                    continue
                y = f.new_var()
                for x in sorted(w.fact_ids):
                    f.add_hard((-y, x))
                guards.append(y)
            f.add_hard(tuple(guards))
            if self.sat(f, stats):
                return a
        raise EngineError("no non-empty repair found although a conflict-free witness exists")

    def scalar(self, q: AggQuery, bag: WitnessBag) -> RangeAnswer:
        if q.op in (AggOp.MIN, AggOp.MAX):
            return self.min_max(q, bag)
        return self.count_sum(q, bag)

    def consistent_keys(self, bag: WitnessBag, stats: Stats, keys: Iterable[tuple] | None = None) -> list[tuple]:
        """Group keys (answers) whose witnesses cannot all be avoided by a repair."""
        by_key: dict[tuple, list[Witness]] = defaultdict(list)
        for w in bag.witnesses:
            by_key[w.group_key].append(w)
        out = []
        for key in (by_key if keys is None else keys):
            ws = by_key[key]
            if any(w.consistent for w in ws):
                out.append(key)
                continue
            f = self.prep.base()
            for w in ws:
                f.add_hard(_exclusion(w))
            if not self.sat(f, stats):
                out.append(key)
        return out


def direct_value(q: AggQuery, witnesses: Sequence[Witness]):
    """Aggregate over witnesses assumed present (scaled integers)."""
    if q.op in (AggOp.MIN, AggOp.MAX):
        vals = [w.value for w in witnesses]
        if not vals:
            return None
        return min(vals) if q.op is AggOp.MIN else max(vals)
    if q.distinct:
        vals = {w.value for w in witnesses}
        return len(vals) if q.op is AggOp.COUNT else sum(vals)
    if q.op in (AggOp.COUNT, AggOp.COUNT_STAR):
        return sum(w.multiplicity for w in witnesses)
    return sum(w.multiplicity * w.value for w in witnesses)


def _bag_for(q: AggQuery, instance: Instance, prep: _Prepared) -> WitnessBag:
    q_star = derive_witness_query(q)
    ng = len(q.group_positions)
    if q.op is AggOp.COUNT_STAR or (q.op is AggOp.COUNT and not q.distinct):
        return witness_bag(q_star.with_head(range(ng)), instance, ng, None, prep.elide)
    numeric = not (q.op is AggOp.COUNT and q.distinct)
    return witness_bag(q_star, instance, ng, ng, prep.elide, numeric=numeric)


def _check_shape(q: AggQuery) -> None:
    if q.distinct and q.op not in (AggOp.COUNT, AggOp.SUM):
        raise EngineError(f"DISTINCT is not supported with {q.op.value}")


def range_answer_scalar(q: AggQuery, instance: Instance, options: EngineOptions | None = None) -> RangeAnswer:
    if q.grouped:
        raise EngineError("range_answer_scalar needs a query without GROUP BY")
    _check_shape(q)
    options = options or EngineOptions()
    t = time.perf_counter()
    prep = _Prepared(instance, q.underlying.relations)
    bag = _bag_for(q, instance, prep)
    prep_ms = 1000 * (time.perf_counter() - t)
    ans = _Runner(prep, options).scalar(q, bag)
    ans.stats.encode_ms += prep_ms
    return ans


def consistent_part_shortcut(q: AggQuery, instance: Instance) -> RangeAnswer | None:
    """Answer without any solver call when every witness lies in relations
    that have no violations; None otherwise."""
    if q.grouped:
        raise EngineError("the shortcut applies to scalar queries")
    _check_shape(q)
    prep = _Prepared(instance, q.underlying.relations)
    bag = _bag_for(q, instance, prep)
    if not all(w.consistent for w in bag.witnesses):
        return None
    scale = 0 if q.op in (AggOp.COUNT, AggOp.COUNT_STAR) else bag.scale
    v = direct_value(q, bag.witnesses)
    if q.op in (AggOp.MIN, AggOp.MAX):
        return RangeAnswer(v, v, scale, empty_possible=v is None)
    return RangeAnswer(v, v, scale)


def consistent_answers_ucq(q: UnionQuery, instance: Instance, options: EngineOptions | None = None) -> set[tuple]:
    """Answers of ``q`` that hold in every repair."""
    options = options or EngineOptions()
    prep = _Prepared(instance, q.relations)
    bag = witness_bag(q, instance, q.arity, None, prep.elide)
    return set(_Runner(prep, options).consistent_keys(bag, Stats()))


def _key_compare(order: Sequence[tuple[int, bool]]) -> Callable:
    def cmp(a: tuple, b: tuple) -> int:
        for i, desc in order:
            x, y = a[i], b[i]
            if x == y:
                continue
            less = (isinstance(x, str), x) < (isinstance(y, str), y)
            r = -1 if less else 1
            return -r if desc else r
        return 0

    return cmp


def range_answers_grouped(q: AggQuery, instance: Instance, options: EngineOptions | None = None
                          ) -> GroupedRangeAnswers:
    """Range answers per group that is present in every repair, ordered by
    the grouping attributes (ORDER BY when given), cut to TOP k."""
    if not q.grouped:
        raise EngineError("range_answers_grouped needs GROUP BY")
    _check_shape(q)
    options = options or EngineOptions()
    total = Stats()
    t = time.perf_counter()
    prep = _Prepared(instance, q.underlying.relations)
    runner = _Runner(prep, options)
    ng = len(q.group_positions)
    zbag = witness_bag(grouping_query(q), instance, ng, None, prep.elide)
    candidates = sorted({w.group_key for w in zbag.witnesses}, key=functools.cmp_to_key(
        _key_compare(q.order_by or [(i, options.top_k_descending) for i in range(ng)])))
    full = _bag_for(q, instance, prep)
    total.encode_ms += 1000 * (time.perf_counter() - t)
    by_key: dict[tuple, list[Witness]] = defaultdict(list)
    for w in full.witnesses:
        by_key[w.group_key].append(w)
    keys: list[tuple] = []
    for key in candidates:
        if q.top_k is not None and len(keys) >= q.top_k:
            break
        keys.extend(runner.consistent_keys(zbag, total, [key]))
    scalar_q = replace(q, group_positions=(), top_k=None, order_by=())

    def one(key):
        sub = WitnessBag(by_key[key], full.scale)
        ans = runner.scalar(scalar_q, sub)
        ans.group_key = key
        return ans

    if options.jobs > 1 and len(keys) > 1:
        with ThreadPoolExecutor(max_workers=options.jobs) as pool:
            answers = list(pool.map(one, keys))
    else:
        answers = [one(k) for k in keys]
    for a in answers:
        total.add(a.stats)
    return GroupedRangeAnswers(answers, total)


def encode_query(q: AggQuery, instance: Instance) -> list[tuple[str, WcnfFormula]]:
    """Formulas without solving: for COUNT/SUM the glb formula and its
    MinSAT twin; for MIN/MAX the check whether a repair avoids every witness.
    Grouped queries give one set per candidate group, named after the key."""
    _check_shape(q)
    prep = _Prepared(instance, q.underlying.relations)
    bag = _bag_for(q, instance, prep)
    parts: dict[tuple, list[Witness]] = defaultdict(list)
    for w in bag.witnesses:
        parts[w.group_key].append(w)
    if not q.grouped:
        parts = {(): bag.witnesses}
    out = []
    for key in sorted(parts, key=lambda k: tuple((isinstance(v, str), v) for v in k)):
        prefix = "_".join(str(v) for v in key) + "_" if key else ""
        sub = WitnessBag(parts[key], bag.scale)
        f = prep.base()
        if q.op in (AggOp.MIN, AggOp.MAX):
            for w in sub.witnesses:
                if not w.consistent:
                    f.add_hard(_exclusion(w))
            out.append((prefix + "empty", f))
            continue
        if q.distinct:
            encode_distinct(sub, "COUNT" if q.op is AggOp.COUNT else "SUM", f)
        else:
            encode_count_sum(sub, q.op.value, f)
        out.append((prefix + "glb", f))
        out.append((prefix + "lub", minsat_transform(f)[0]))
    return out


def range_answers(q: AggQuery, instance: Instance, options: EngineOptions | None = None):
    """Scalar or grouped answers depending on the query."""
    if q.grouped:
        return range_answers_grouped(q, instance, options)
    return range_answer_scalar(q, instance, options)
