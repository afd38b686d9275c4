"""Schemas, constraints, facts and the in-memory instance.

Fact ids are dense and 1-based, assigned in load order. They double as the
SAT variable numbers used by the encoders, so ``x_i`` always means fact ``i``.
"""
from __future__ import annotations

import datetime as _dt
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

EPOCH = _dt.date(1970, 1, 1)


class SchemaError(ValueError):
    pass


class DataError(ValueError):
    pass


class Kind(str, Enum):
    INTEGER = "integer"
    DECIMAL = "decimal"
    TEXT = "text"
    DATE = "date"


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: Kind = Kind.TEXT
    # number of fractional digits kept for DECIMAL columns
    scale: int = 0

    @property
    def numeric(self) -> bool:
        return self.kind is not Kind.TEXT

    def parse(self, text: str):
        """Parse a CSV cell into the stored representation."""
        if self.kind is Kind.TEXT:
            return text
        raw = text.strip()
        if raw == "":
            raise DataError(f"empty value in {self.kind.value} column {self.name!r}")
        if self.kind is Kind.INTEGER:
            try:
                return int(raw)
            except ValueError:
                raise DataError(f"cannot parse {raw!r} as integer for column {self.name!r}") from None
        if self.kind is Kind.DECIMAL:
            try:
                d = Decimal(raw)
            except InvalidOperation:
                raise DataError(f"cannot parse {raw!r} as decimal for column {self.name!r}") from None
            scaled = d.scaleb(self.scale)
            if scaled != scaled.to_integral_value():
                raise DataError(f"{raw!r} has more than {self.scale} decimal places in column {self.name!r}")
            return int(scaled)
        try:
            return (_dt.date.fromisoformat(raw) - EPOCH).days
        except ValueError:
            raise DataError(f"cannot parse {raw!r} as date for column {self.name!r}") from None

    def format(self, value) -> str:
        if self.kind is Kind.TEXT:
            return value
        if self.kind is Kind.INTEGER:
            return str(value)
        if self.kind is Kind.DECIMAL:
            if self.scale == 0:
                return str(value)
            return str(Decimal(value).scaleb(-self.scale))
        return (EPOCH + _dt.timedelta(days=value)).isoformat()

    def logical(self, value):
        """Value as seen by comparisons and arithmetic."""
        if self.kind is Kind.DECIMAL and self.scale:
            return Fraction(value, 10 ** self.scale)
        return value

    def coerce_constant(self, value):
        """Bring a query/constraint constant into this column's logical domain."""
        if self.kind is Kind.DATE and isinstance(value, str):
            try:
                return (_dt.date.fromisoformat(value) - EPOCH).days
            except ValueError:
                raise DataError(f"cannot parse {value!r} as date for column {self.name!r}") from None
        if self.kind in (Kind.INTEGER, Kind.DECIMAL) and isinstance(value, str):
            raise DataError(f"text constant {value!r} compared with numeric column {self.name!r}")
        if self.kind is Kind.TEXT and not isinstance(value, str):
            raise DataError(f"numeric constant {value!r} compared with text column {self.name!r}")
        return value


@dataclass(frozen=True)
class RelationDef:
    name: str
    attributes: tuple[Attribute, ...]
    key: tuple[int, ...] = ()

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(n.lower() for n in names)) != len(names):
            raise SchemaError(f"duplicate attribute name in relation {self.name}")
        if any(not 0 <= k < len(self.attributes) for k in self.key):
            raise SchemaError(f"invalid key position in relation {self.name}")
        if len(set(self.key)) != len(self.key):
            raise SchemaError(f"repeated key attribute in relation {self.name}")

    @property
    def arity(self) -> int:
        return len(self.attributes)

    @property
    def has_key(self) -> bool:
        return bool(self.key)

    def position(self, attr: str) -> int:
        lowered = attr.lower()
        for i, a in enumerate(self.attributes):
            if a.name.lower() == lowered:
                return i
        raise SchemaError(f"relation {self.name} has no attribute {attr!r}")


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Const:
    value: object

    def __str__(self):
        if isinstance(self.value, str):
            return "'" + self.value.replace("'", "''") + "'"
        return str(self.value)


Term = Union[Var, Const]


@dataclass(frozen=True)
class Atom:
    relation: str
    terms: tuple[Term, ...]
    alias: str | None = None

    def variables(self) -> set[Var]:
        return {t for t in self.terms if isinstance(t, Var)}


COMPARISON_OPS = ("=", "!=", "<", ">", "<=", ">=")


@dataclass(frozen=True)
class Comparison:
    left: object
    op: str
    right: object

    def variables(self) -> set[Var]:
        from .query import expr_variables

        return expr_variables(self.left) | expr_variables(self.right)


@dataclass(frozen=True)
class PrimaryKey:
    relation: str


@dataclass(frozen=True)
class DenialConstraint:
    """Forbids any combination of facts matching ``atoms`` that satisfies every comparison."""

    atoms: tuple[Atom, ...]
    comparisons: tuple[Comparison, ...] = ()
    name: str = ""

    def __post_init__(self):
        if not self.atoms:
            raise SchemaError("denial constraint needs at least one atom")
        bound = set().union(*(a.variables() for a in self.atoms))
        for c in self.comparisons:
            loose = c.variables() - bound
            if loose:
                raise SchemaError(
                    f"denial constraint {self.name or ''} compares unbound variable(s) "
                    + ", ".join(sorted(v.name for v in loose))
                )

    @property
    def relations(self) -> set[str]:
        return {a.relation for a in self.atoms}


Constraint = Union[PrimaryKey, DenialConstraint]


@dataclass(frozen=True)
class Schema:
    relations: tuple[RelationDef, ...]
    constraints: tuple[Constraint, ...] = ()

    def __post_init__(self):
        seen = set()
        for r in self.relations:
            if r.name.lower() in seen:
                raise SchemaError(f"duplicate relation {r.name}")
            seen.add(r.name.lower())
        for c in self.constraints:
            if isinstance(c, PrimaryKey):
                if not self.relation(c.relation).has_key:
                    raise SchemaError(f"primary key constraint on {c.relation}, which declares no key")
                continue
            for atom in c.atoms:
                rel = self.relation(atom.relation)
                if len(atom.terms) != rel.arity:
                    raise SchemaError(f"atom over {rel.name} has {len(atom.terms)} terms, expected {rel.arity}")

    def relation(self, name: str) -> RelationDef:
        lowered = name.lower()
        for r in self.relations:
            if r.name.lower() == lowered:
                return r
        raise SchemaError(f"unknown relation {name!r}")

    def has_relation(self, name: str) -> bool:
        return any(r.name.lower() == name.lower() for r in self.relations)

    @property
    def denial_constraints(self) -> tuple[DenialConstraint, ...]:
        return tuple(c for c in self.constraints if isinstance(c, DenialConstraint))

    @property
    def keyed_relations(self) -> tuple[RelationDef, ...]:
        return tuple(r for r in self.relations if r.has_key)

    def with_keys_as_constraints(self) -> "Schema":
        """Every declared key also listed as an explicit PrimaryKey constraint."""
        have = {c.relation.lower() for c in self.constraints if isinstance(c, PrimaryKey)}
        extra = tuple(PrimaryKey(r.name) for r in self.keyed_relations if r.name.lower() not in have)
        return Schema(self.relations, self.constraints + extra)


@dataclass(frozen=True)
class Fact:
    id: int
    relation: str
    values: tuple

    def __str__(self):
        return f"f{self.id}:{self.relation}{self.values}"


@dataclass(frozen=True)
class KeyEqualGroup:
    relation: str
    key_values: tuple
    fact_ids: tuple[int, ...]

    @property
    def consistent(self) -> bool:
        return len(self.fact_ids) == 1


class Instance:
    """Immutable collection of facts over a schema, with per-relation indexes.

    Attribute indexes are built on first use; everything else is fixed at
    construction time.
    """

    def __init__(self, schema: Schema, facts: Iterable[Fact]):
        self.schema = schema
        self.facts: tuple[Fact, ...] = tuple(facts)
        self._by_relation: dict[str, list[int]] = {r.name: [] for r in schema.relations}
        seen: dict[tuple, int] = {}
        for expected_id, f in enumerate(self.facts, start=1):
            if f.id != expected_id:
                raise DataError(f"fact ids must be dense and 1-based; got {f.id} at position {expected_id}")
            rel = schema.relation(f.relation)
            if len(f.values) != rel.arity:
                raise DataError(f"fact f{f.id} has arity {len(f.values)}, relation {rel.name} expects {rel.arity}")
            ident = (rel.name, f.values)
            if ident in seen:
                raise DataError(f"fact f{f.id} duplicates f{seen[ident]}")
            seen[ident] = f.id
            self._by_relation[rel.name].append(f.id)
        self._attr_index: dict[tuple[str, int], dict[object, list[int]]] = {}
        self._logical: dict[int, tuple] = {}
        self._key_index: dict[str, dict[tuple, list[int]]] = {}
        for r in schema.keyed_relations:
            idx: dict[tuple, list[int]] = defaultdict(list)
            for fid in self._by_relation[r.name]:
                vals = self.facts[fid - 1].values
                idx[tuple(vals[k] for k in r.key)].append(fid)
            self._key_index[r.name] = dict(idx)

    @classmethod
    def from_rows(cls, schema: Schema, rows: Mapping[str, Sequence[Sequence]]) -> "Instance":
        """Build an instance from stored-representation rows, relations in schema order."""
        facts = []
        for rel in schema.relations:
            for values in rows.get(rel.name, ()):
                facts.append(Fact(len(facts) + 1, rel.name, tuple(values)))
        unknown = {name for name in rows} - {r.name for r in schema.relations}
        if unknown:
            raise DataError(f"rows given for unknown relation(s): {', '.join(sorted(unknown))}")
        return cls(schema, facts)

    def __len__(self):
        return len(self.facts)

    def __repr__(self):
        return f"Instance({len(self.facts)} facts over {len(self.schema.relations)} relations)"

    def fact(self, fid: int) -> Fact:
        return self.facts[fid - 1]

    def relation_fact_ids(self, relation: str) -> list[int]:
        return self._by_relation[self.schema.relation(relation).name]

    def rows(self) -> dict[str, list[tuple]]:
        return {name: [self.facts[i - 1].values for i in ids] for name, ids in self._by_relation.items()}

    def logical_values(self, fid: int) -> tuple:
        got = self._logical.get(fid)
        if got is None:
            f = self.facts[fid - 1]
            attrs = self.schema.relation(f.relation).attributes
            got = tuple(a.logical(v) for a, v in zip(attrs, f.values))
            self._logical[fid] = got
        return got

    def attribute_index(self, relation: str, position: int) -> dict[object, list[int]]:
        name = self.schema.relation(relation).name
        key = (name, position)
        idx = self._attr_index.get(key)
        if idx is None:
            built: dict[object, list[int]] = defaultdict(list)
            for fid in self._by_relation[name]:
                built[self.logical_values(fid)[position]].append(fid)
            idx = self._attr_index[key] = dict(built)
        return idx

    def key_index(self, relation: str) -> dict[tuple, list[int]]:
        return self._key_index[self.schema.relation(relation).name]

    def restricted(self, keep: Iterable[int]) -> "Instance":
        """Sub-instance with the given fact ids, renumbered densely in original order."""
        keep = sorted(set(keep))
        facts = [Fact(i, self.facts[fid - 1].relation, self.facts[fid - 1].values) for i, fid in enumerate(keep, 1)]
        return Instance(self.schema, facts)


def key_equal_groups(instance: Instance, relations: Iterable[str] | None = None,
                     require_keys: bool = False) -> list[KeyEqualGroup]:
    """Partition each keyed relation's facts into maximal key-equal groups.

    Relations without a key are skipped unless ``require_keys`` is set, in
    which case they raise. Groups come out in relation order, then by key
    values.
    """
    wanted = None if relations is None else {instance.schema.relation(r).name for r in relations}
    groups: list[KeyEqualGroup] = []
    for rel in instance.schema.relations:
        if wanted is not None and rel.name not in wanted:
            continue
        if not rel.has_key:
            if require_keys:
                raise SchemaError(f"relation {rel.name} declares no key")
            continue
        idx = instance.key_index(rel.name)
        for key in sorted(idx, key=_sort_key):
            groups.append(KeyEqualGroup(rel.name, key, tuple(idx[key])))
    return groups


def _sort_key(values: tuple):
    # mixed types inside one key column are impossible, but keep ordering total anyway
    return tuple((type(v).__name__, v) for v in values)


def is_consistent(instance: Instance) -> bool:
    """True iff no key is violated and no denial constraint has a matching combination."""
    for rel in instance.schema.keyed_relations:
        if any(len(ids) > 1 for ids in instance.key_index(rel.name).values()):
            return False
    if not instance.schema.denial_constraints:
        return True
    from .evaluation import dc_violations

    for dc in instance.schema.denial_constraints:
        for _ in dc_violations(dc, instance):
            return False
    return True
