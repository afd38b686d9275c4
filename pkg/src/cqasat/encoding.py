"""Clause systems for range consistent answers.

Fact ``i`` is variable ``i``. Auxiliary variables are allocated after the
largest fact id, in the order the encoders ask for them, so the same inputs
always give the same formula.

A repair ``J`` corresponds to a model ``s`` of the hard clauses. For the
COUNT/SUM encodings the aggregate on ``J`` is recovered as

    Q(J) = fixed + offset - satisfied_soft_weight(s)

where ``offset`` is the soft weight that would be satisfied if every
witness were absent and ``fixed`` collects witnesses that lie entirely in
the consistent part of the instance.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .evaluation import TRUE_FACT, Witness, WitnessBag, near_violation_index
from .relational import KeyEqualGroup


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class Clause:
    literals: tuple[int, ...]
    weight: int | None = None  # None marks a hard clause

    def __post_init__(self):
        if not self.literals:
            raise EncodingError("empty clause")
        if 0 in self.literals:
            raise EncodingError("literal 0 is not a variable")
        if len(set(self.literals)) != len(self.literals):
            raise EncodingError(f"duplicate literal in clause {self.literals}")
        if any(-l in self.literals for l in self.literals):
            raise EncodingError(f"complementary literals in clause {self.literals}")
        if self.weight is not None and self.weight <= 0:
            raise EncodingError("soft clause weight must be positive")

    @property
    def hard(self) -> bool:
        return self.weight is None


@dataclass
class WcnfFormula:
    num_vars: int = 0
    hard: list[tuple[int, ...]] = field(default_factory=list)
    soft: list[tuple[tuple[int, ...], int]] = field(default_factory=list)

    @property
    def top(self) -> int:
        return 1 + sum(w for _, w in self.soft)

    @property
    def total_soft_weight(self) -> int:
        return sum(w for _, w in self.soft)

    @property
    def num_clauses(self) -> int:
        return len(self.hard) + len(self.soft)

    def new_var(self) -> int:
        self.num_vars += 1
        return self.num_vars

    def _check(self, lits: Sequence[int]) -> tuple[int, ...]:
        lits = tuple(lits)
        Clause(lits)
        for l in lits:
            if abs(l) > self.num_vars:
                self.num_vars = abs(l)
        return lits

    def add_hard(self, lits: Iterable[int]) -> None:
        self.hard.append(self._check(tuple(lits)))

    def add_soft(self, lits: Iterable[int], weight: int) -> None:
        if weight <= 0:
            raise EncodingError("soft clause weight must be positive")
        self.soft.append((self._check(tuple(lits)), weight))

    def clauses(self) -> list[Clause]:
        return [Clause(c) for c in self.hard] + [Clause(c, w) for c, w in self.soft]

    def copy(self) -> "WcnfFormula":
        return WcnfFormula(self.num_vars, list(self.hard), list(self.soft))


@dataclass
class EncodingArtifacts:
    formula: WcnfFormula
    # soft weight satisfied when every witness is absent; Q(I_p) for SUM
    offset: int = 0
    # contribution of witnesses present in every repair
    fixed: int = 0
    provenance: dict[int, str] = field(default_factory=dict)

    @property
    def total_soft_weight(self) -> int:
        return self.formula.total_soft_weight

    def value(self, satisfied_weight: int) -> int:
        return self.fixed + self.offset - satisfied_weight


class _Aux:
    """Allocates auxiliary variables and records what they stand for."""

    def __init__(self, formula: WcnfFormula, provenance: dict[int, str]):
        self.formula = formula
        self.provenance = provenance

    def new(self, label: str) -> int:
        v = self.formula.new_var()
        self.provenance[v] = label
        return v


def fact_formula(num_facts: int) -> tuple[WcnfFormula, dict[int, str]]:
    """Empty formula whose first ``num_facts`` variables are the facts."""
    return WcnfFormula(num_facts), {i: f"x{i}" for i in range(1, num_facts + 1)}


# -- hard side ----------------------------------------------------------------

def encode_key_hard(groups: Iterable[KeyEqualGroup], at_most_one: bool = True) -> list[tuple[int, ...]]:
    """Exactly one fact per key-equal group (at least one when ``at_most_one`` is off)."""
    out = []
    amo = []
    for g in groups:
        ids = tuple(sorted(g.fact_ids))
        out.append(ids)
        if at_most_one:
            for i in range(len(ids)):
                for j in range(i + 1, len(ids)):
                    amo.append((-ids[i], -ids[j]))
    return out + amo


def encode_min_iteration_base(groups: Iterable[KeyEqualGroup]) -> WcnfFormula:
    """Hard at-least-one clauses only, as used by the iterative MIN/MAX search."""
    formula = WcnfFormula()
    for c in encode_key_hard(groups, at_most_one=False):
        formula.add_hard(c)
    return formula


def encode_denial(violations: Sequence[frozenset[int]], facts: Iterable[int], formula: WcnfFormula,
                  provenance: dict[int, str] | None = None) -> None:
    """Hard clauses whose models are exactly the subset repairs of ``facts``.

    ``violations`` are the minimal violations among ``facts``. Each violation
    forbids keeping all of its facts; each fact is either kept or has a
    near-violation whose facts are all kept (maximality).
    """
    aux = _Aux(formula, provenance if provenance is not None else {})
    for v in violations:
        formula.add_hard(tuple(-f for f in sorted(v)))
    near = near_violation_index(violations)
    p_vars: dict[frozenset[int], int] = {}
    x_true = None
    for f in sorted(facts):
        nv = near.get(f)
        if not nv:
            formula.add_hard((f,))
            continue
        gamma = [f]
        for n in nv:
            p = p_vars.get(n)
            if p is None:
                members = sorted(n)
                if members == [TRUE_FACT]:
                    if x_true is None:
                        x_true = aux.new("x_true")
                        formula.add_hard((x_true,))
                    members = [x_true]
                p = p_vars[n] = aux.new("p{" + ",".join(f"f{d}" if d else "true" for d in sorted(n)) + "}")
                for d in members:
                    formula.add_hard((-p, d))
                formula.add_hard(tuple(-d for d in members) + (p,))
            if p not in gamma:
                gamma.append(p)
        formula.add_hard(tuple(gamma))


# -- soft side ----------------------------------------------------------------

def encode_count_sum(bag: WitnessBag, op: str, formula: WcnfFormula,
                     provenance: dict[int, str] | None = None) -> EncodingArtifacts:
    """Soft clauses for COUNT(*), COUNT(A) and SUM(A) over the witness bag."""
    aux = _Aux(formula, provenance if provenance is not None else {})
    art = EncodingArtifacts(formula, provenance=aux.provenance)
    counting = op in ("COUNT_STAR", "COUNT")
    if not counting and op != "SUM":
        raise EncodingError(f"encode_count_sum does not handle {op}")
    for j, w in enumerate(bag.witnesses, 1):
        if counting:
            weight = w.multiplicity
            sign = 1
        else:
            if w.value == 0:
                continue
            weight = w.multiplicity * abs(w.value)
            sign = 1 if w.value > 0 else -1
        if w.consistent:
            art.fixed += sign * weight
            continue
        facts = sorted(w.fact_ids)
        if sign > 0:
            formula.add_soft(tuple(-f for f in facts), weight)
            art.offset += weight
        else:
            y = aux.new(f"y{j}")
            formula.add_soft((y,), weight)
            formula.add_hard(tuple(-f for f in facts) + (y,))
            for f in facts:
                formula.add_hard((-y, f))
    return art


def encode_distinct(bag: WitnessBag, op: str, formula: WcnfFormula,
                    provenance: dict[int, str] | None = None) -> EncodingArtifacts:
    """COUNT(DISTINCT A) / SUM(DISTINCT A): one indicator per distinct value.

    ``v^b`` is true exactly when no witness of value ``b`` survives.
    """
    if op not in ("COUNT", "SUM"):
        raise EncodingError(f"DISTINCT is not supported for {op}")
    aux = _Aux(formula, provenance if provenance is not None else {})
    art = EncodingArtifacts(formula, provenance=aux.provenance)
    by_value: dict[int, list[Witness]] = defaultdict(list)
    for w in bag.witnesses:
        by_value[w.value].append(w)
    for b in sorted(by_value, key=lambda b: (isinstance(b, str), b)):
        ws = by_value[b]
        if op == "SUM" and b == 0:
            continue
        gain = 1 if op == "COUNT" else b
        if any(w.consistent for w in ws):
            art.fixed += gain
            continue
        z_lits = []
        for j, w in enumerate(ws, 1):
            facts = sorted(w.fact_ids)
            if len(facts) == 1:
                z_lits.append(-facts[0])
                continue
            z = aux.new(f"z[{b}]{j}")
            formula.add_hard((-z,) + tuple(-f for f in facts))
            for f in facts:
                formula.add_hard((z, f))
            z_lits.append(z)
        v = aux.new(f"v[{b}]")
        for z in z_lits:
            formula.add_hard((-v, z))
        formula.add_hard((v,) + tuple(-z for z in z_lits))
        if gain > 0:
            formula.add_soft((v,), gain)
            art.offset += gain
        else:
            formula.add_soft((-v,), -gain)
    return art


def minsat_transform(formula: WcnfFormula) -> tuple[WcnfFormula, int]:
    """Replace every soft clause by its CNF negation.

    Returns the new formula and the constant ``K`` (sum of clause length times
    weight) so that the minimum satisfied weight of the input equals ``K``
    minus the maximum satisfied weight of the output.
    """
    out = WcnfFormula(formula.num_vars, list(formula.hard), [])
    constant = 0
    for lits, w in formula.soft:
        for i, lit in enumerate(lits):
            out.soft.append((tuple(lits[:i]) + (-lit,), w))
        constant += len(lits) * w
    return out, constant
