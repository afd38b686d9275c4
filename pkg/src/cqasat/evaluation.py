"""Query evaluation, witness bags, minimal violations and near-violations."""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Iterator, Sequence

from .query import ConjunctiveQuery, UnionQuery, comparison_variables, eval_comparison, eval_expr
from .relational import Atom, Comparison, Const, DenialConstraint, Instance, Var

INT64_MAX = 2 ** 63 - 1

# fact id standing for the always-present fact in near-violations of facts
# that violate the constraints on their own
TRUE_FACT = 0


class ValueOverflowError(OverflowError):
    pass


# -- join engine --------------------------------------------------------------

@dataclass
class _Step:
    index: int  # position of the atom in the query
    atom: Atom
    candidates: list[int] | None  # precomputed ids when no bound position helps
    comparisons: list[Comparison]


def _static_candidates(atom: Atom, instance: Instance) -> list[int]:
    best = None
    for p, t in enumerate(atom.terms):
        if isinstance(t, Const):
            ids = instance.attribute_index(atom.relation, p).get(t.value, [])
            if best is None or len(ids) < len(best):
                best = ids
    return instance.relation_fact_ids(atom.relation) if best is None else best


def _plan(atoms: Sequence[Atom], comparisons: Sequence[Comparison], instance: Instance) -> list[_Step]:
    sizes = [len(_static_candidates(a, instance)) for a in atoms]
    remaining = list(range(len(atoms)))
    bound: set[Var] = set()
    order = []
    while remaining:
        # prefer atoms connected to what is already bound, then the smallest
        def rank(i):
            connected = bool(atoms[i].variables() & bound)
            return (not connected if bound else False, sizes[i], i)

        i = min(remaining, key=rank)
        remaining.remove(i)
        order.append(i)
        bound |= atoms[i].variables()
    steps = []
    bound = set()
    pending = list(comparisons)
    for i in order:
        a = atoms[i]
        uses_bound = any(isinstance(t, Var) and t in bound for t in a.terms)
        bound |= a.variables()
        ready = [c for c in pending if comparison_variables(c) <= bound]
        pending = [c for c in pending if c not in ready]
        steps.append(_Step(i, a, None if uses_bound else _static_candidates(a, instance), ready))
    # comparisons without variables are checked up front by the caller
    return steps


def assignments(cq: ConjunctiveQuery, instance: Instance) -> Iterator[tuple[tuple[int, ...], dict]]:
    """All witnessing assignments: (fact ids in atom order, variable binding)."""
    ground = [c for c in cq.comparisons if not comparison_variables(c)]
    if any(not eval_comparison(c, {}) for c in ground):
        return
    steps = _plan(cq.atoms, [c for c in cq.comparisons if comparison_variables(c)], instance)
    chosen = [0] * len(cq.atoms)
    env: dict[Var, object] = {}
    yield from _extend(steps, 0, chosen, env, instance)


def _extend(steps, k, chosen, env, instance) -> Iterator:
    if k == len(steps):
        yield tuple(chosen), dict(env)
        return
    step = steps[k]
    atom = step.atom
    cands = step.candidates
    if cands is None:
        best = None
        for p, t in enumerate(atom.terms):
            if isinstance(t, Var) and t in env:
                ids = instance.attribute_index(atom.relation, p).get(env[t], ())
                if best is None or len(ids) < len(best):
                    best = ids
                    if not ids:
                        break
        cands = best
    for fid in cands:
        vals = instance.logical_values(fid)
        added = []
        ok = True
        for t, v in zip(atom.terms, vals):
            if isinstance(t, Const):
                if t.value != v:
                    ok = False
                    break
            elif t in env:
                if env[t] != v:
                    ok = False
                    break
            else:
                env[t] = v
                added.append(t)
        if ok:
            for c in step.comparisons:
                if not eval_comparison(c, env):
                    ok = False
                    break
        if ok:
            chosen[step.index] = fid
            yield from _extend(steps, k + 1, chosen, env, instance)
        for t in added:
            del env[t]


def evaluate(q: UnionQuery, instance: Instance) -> set[tuple]:
    """Set-semantics answers of a union of conjunctive queries."""
    out = set()
    for cq in q.disjuncts:
        for _, env in assignments(cq, instance):
            out.add(tuple(eval_expr(e, env) for e in cq.head))
    return out


def evaluate_bag(q: UnionQuery, instance: Instance) -> Counter:
    """Bag-semantics answers: each witnessing assignment counts once, disjuncts added."""
    out: Counter = Counter()
    for cq in q.disjuncts:
        for _, env in assignments(cq, instance):
            out[tuple(eval_expr(e, env) for e in cq.head)] += 1
    return out


# -- witnesses ----------------------------------------------------------------

@dataclass(frozen=True)
class Witness:
    fact_ids: frozenset[int]
    multiplicity: int = 1
    # scaled integer; None for COUNT(*)
    value: int | None = None
    group_key: tuple = ()

    @property
    def consistent(self) -> bool:
        """Every fact of the witness was elided, so it is present in every repair."""
        return not self.fact_ids


@dataclass
class WitnessBag:
    witnesses: list[Witness]
    # 10**scale turns logical values into the stored integers
    scale: int = 0

    @property
    def positive(self) -> list[Witness]:
        return [w for w in self.witnesses if w.value is not None and w.value > 0]

    @property
    def negative(self) -> list[Witness]:
        return [w for w in self.witnesses if w.value is not None and w.value < 0]

    @property
    def zero(self) -> list[Witness]:
        return [w for w in self.witnesses if w.value is not None and w.value == 0]

    def __len__(self):
        return len(self.witnesses)

    def total_multiplicity(self) -> int:
        return sum(w.multiplicity for w in self.witnesses)


def decimal_places(v) -> int:
    """Digits after the decimal point needed to write ``v`` exactly."""
    if isinstance(v, int):
        return 0
    if not isinstance(v, Fraction):
        raise TypeError(f"aggregation value {v!r} is not numeric")
    d = v.denominator
    places = 0
    while d % 10 == 0:
        d //= 10
        places += 1
    while d % 2 == 0:
        d //= 2
        places += 1
    while d % 5 == 0:
        d //= 5
        places += 1
    if d != 1:
        raise ValueError(f"aggregation value {v} has no finite decimal expansion")
    return places


def to_scaled(v, scale: int) -> int:
    scaled = Fraction(v) * 10 ** scale
    if scaled.denominator != 1:
        raise ValueError(f"value {v} not representable at scale {scale}")
    n = scaled.numerator
    if abs(n) > INT64_MAX:
        raise ValueOverflowError(f"scaled value {n} exceeds 64-bit range")
    return n


def witness_bag(q_star: UnionQuery, instance: Instance, n_group: int = 0, value_position: int | None = None,
                elide: Iterable[str] = (), scale: int | None = None, numeric: bool = True) -> WitnessBag:
    """Bag of witnesses of ``q_star``.

    The head of ``q_star`` is ``n_group`` grouping expressions optionally
    followed by the value expression at ``value_position``. Facts of relations
    in ``elide`` are dropped from witness fact sets. Witnesses with equal
    (fact set, value, group key) are merged and their multiplicities added.
    """
    elided = {instance.schema.relation(r).name for r in elide}
    raw: dict[tuple, int] = defaultdict(int)
    for cq in q_star.disjuncts:
        keep = [i for i, a in enumerate(cq.atoms) if a.relation not in elided]
        for fids, env in assignments(cq, instance):
            group = tuple(eval_expr(cq.head[p], env) for p in range(n_group))
            value = None if value_position is None else eval_expr(cq.head[value_position], env)
            raw[(frozenset(fids[i] for i in keep), value, group)] += 1
    if not numeric:
        witnesses = [Witness(fs, m, value, group) for (fs, value, group), m in raw.items()]
        witnesses.sort(key=lambda w: (tuple(sorted(w.fact_ids)), _sortable(w.value),
                                      tuple(_sortable(v) for v in w.group_key)))
        return WitnessBag(witnesses, 0)
    if value_position is not None and scale is None:
        scale = max((decimal_places(v) for _, v, _ in raw), default=0)
    scale = scale or 0
    witnesses = []
    for (fs, value, group), m in raw.items():
        sv = None if value is None else to_scaled(value, scale)
        witnesses.append(Witness(fs, m, sv, group))
    witnesses.sort(key=_witness_order)
    return WitnessBag(witnesses, scale)


def _sortable(v):
    return (isinstance(v, str), v if v is not None else 0)


def _witness_order(w: Witness):
    return (tuple(sorted(w.fact_ids)), 0 if w.value is None else w.value,
            tuple(_sortable(v) for v in w.group_key))


# -- violations ---------------------------------------------------------------

def dc_violations(dc: DenialConstraint, instance: Instance) -> Iterator[frozenset[int]]:
    """Fact sets matching every atom of ``dc`` and satisfying its comparisons."""
    cq = ConjunctiveQuery(dc.atoms, (), dc.comparisons)
    for fids, _ in assignments(cq, instance):
        yield frozenset(fids)


def _key_pairs(instance: Instance, relations: set[str] | None) -> Iterator[frozenset[int]]:
    for rel in instance.schema.keyed_relations:
        if relations is not None and rel.name not in relations:
            continue
        for ids in instance.key_index(rel.name).values():
            for a, b in combinations(ids, 2):
                yield frozenset((a, b))


def minimal_violations(instance: Instance, relations: Iterable[str] | None = None) -> list[frozenset[int]]:
    """Minimal violating fact sets for all keys and denial constraints.

    With ``relations`` given, only keys of those relations and denial
    constraints mentioning at least one of them are considered.
    """
    wanted = None if relations is None else {instance.schema.relation(r).name for r in relations}
    found: set[frozenset[int]] = set(_key_pairs(instance, wanted))
    for dc in instance.schema.denial_constraints:
        if wanted is not None and not (dc.relations & wanted):
            continue
        found.update(dc_violations(dc, instance))
    out = [s for s in found if not _has_violating_subset(s, found)]
    out.sort(key=lambda s: (len(s), sorted(s)))
    return out


def _has_violating_subset(s: frozenset[int], found: set[frozenset[int]]) -> bool:
    items = sorted(s)
    for r in range(1, len(items)):
        for sub in combinations(items, r):
            if frozenset(sub) in found:
                return True
    return False


def near_violation_index(violations: Sequence[frozenset[int]]) -> dict[int, list[frozenset[int]]]:
    """fact id -> near-violations, derived from a list of minimal violations.

    ``frozenset({TRUE_FACT})`` marks a fact that violates on its own.
    """
    out: dict[int, list[frozenset[int]]] = defaultdict(list)
    for v in violations:
        for f in sorted(v):
            rest = v - {f}
            out[f].append(rest if rest else frozenset((TRUE_FACT,)))
    return dict(out)


def near_violations(instance: Instance, fid: int, violations: Sequence[frozenset[int]] | None = None
                    ) -> list[frozenset[int]]:
    if violations is None:
        violations = minimal_violations(instance)
    return near_violation_index(violations).get(fid, [])


def dirty_relations(instance: Instance, violations: Iterable[frozenset[int]]) -> set[str]:
    """Relations having at least one fact in some minimal violation."""
    return {instance.fact(f).relation for v in violations for f in v}
