"""Schema files, CSV data, inconsistency injection and instance generators."""
from __future__ import annotations

import csv
import io
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .query import QueryError, UnionQuery, parse_query, _cq_where
from .relational import (
    Attribute,
    DataError,
    DenialConstraint,
    Fact,
    Instance,
    Kind,
    PrimaryKey,
    RelationDef,
    Schema,
    SchemaError,
)

# -- schema files -------------------------------------------------------------

_KIND_ALIASES = {
    "integer": Kind.INTEGER, "int": Kind.INTEGER, "bigint": Kind.INTEGER,
    "decimal": Kind.DECIMAL, "numeric": Kind.DECIMAL,
    "text": Kind.TEXT, "string": Kind.TEXT, "varchar": Kind.TEXT, "char": Kind.TEXT,
    "date": Kind.DATE,
}
_STATEMENT_START = re.compile(r"^\s*(relation|dc|fd)\b", re.IGNORECASE)
_RELATION_RX = re.compile(
    r"^\s*relation\s+([A-Za-z_][\w]*)\s*\((.*?)\)\s*(?:key\s*\(([^)]*)\))?\s*;?\s*$",
    re.IGNORECASE | re.DOTALL,
)
_ATTR_RX = re.compile(r"^\s*([A-Za-z_][\w]*)\s+([A-Za-z]+)\s*(?:\(\s*(\d+)\s*(?:,\s*(\d+)\s*)?\))?\s*$")
_DC_RX = re.compile(
    r"^\s*dc\s+(?:([A-Za-z_][\w]*)\s*:\s*)?forall\s+(.*?)\s*:\s*(.*?)\s*;?\s*$", re.IGNORECASE | re.DOTALL
)
_FD_RX = re.compile(r"^\s*fd\s+([A-Za-z_][\w]*)\s*:\s*(.*?)->(.*?)\s*;?\s*$", re.IGNORECASE | re.DOTALL)
_BINDING_RX = re.compile(r"^\s*([A-Za-z_][\w]*)\s+in\s+([A-Za-z_][\w]*)\s*$", re.IGNORECASE)


def _strip_comment(line: str) -> str:
    in_str = False
    for i, ch in enumerate(line):
        if ch == "'":
            in_str = not in_str
        elif ch == "#" and not in_str:
            return line[:i]
    return line


def _statements(text: str) -> list[tuple[int, str]]:
    out: list[tuple[int, list[str]]] = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw)
        if not line.strip():
            continue
        if _STATEMENT_START.match(line):
            out.append((n, [line]))
        elif out:
            out[-1][1].append(line)
        else:
            raise SchemaError(f"line {n}: expected 'relation', 'dc' or 'fd'")
    return [(n, " ".join(lines)) for n, lines in out]


def _parse_relation(n: int, stmt: str) -> RelationDef:
    m = _RELATION_RX.match(stmt)
    if not m:
        raise SchemaError(f"line {n}: malformed relation declaration")
    name, body, key = m.groups()
    attrs = []
    for part in re.split(r",(?![^(]*\))", body):
        am = _ATTR_RX.match(part)
        if not am:
            raise SchemaError(f"line {n}: malformed attribute {part.strip()!r}")
        aname, kname, p1, p2 = am.groups()
        kind = _KIND_ALIASES.get(kname.lower())
        if kind is None:
            raise SchemaError(f"line {n}: unknown attribute type {kname!r}")
        scale = 0
        if kind is Kind.DECIMAL:
            # decimal(s) or SQL-style decimal(p, s)
            scale = int(p2) if p2 is not None else int(p1 or 0)
        attrs.append(Attribute(aname, kind, scale))
    rel = RelationDef(name, tuple(attrs))
    if key is not None:
        positions = tuple(rel.position(k.strip()) for k in key.split(",") if k.strip())
        if not positions:
            raise SchemaError(f"line {n}: empty key")
        rel = RelationDef(name, tuple(attrs), positions)
    return rel


def _dc_from_sql(schema: Schema, bindings: list[tuple[str, str]], body: str, name: str, n: int
                 ) -> list[DenialConstraint]:
    from_sql = ", ".join(f"{rel} AS {var}" for var, rel in bindings)
    sql = f"SELECT 1 FROM {from_sql}" + (f" WHERE {body}" if body.strip() else "")
    try:
        q = parse_query(sql, schema)
    except (QueryError, DataError, SchemaError) as e:
        raise SchemaError(f"line {n}: {e}") from None
    assert isinstance(q, UnionQuery)
    out = []
    for i, cq in enumerate(q.disjuncts):
        label = name if len(q.disjuncts) == 1 else f"{name}_{i + 1}"
        out.append(DenialConstraint(cq.atoms, cq.comparisons, label))
    return out


def _parse_dc(schema: Schema, n: int, stmt: str, auto_name: str) -> list[DenialConstraint]:
    m = _DC_RX.match(stmt)
    if not m:
        raise SchemaError(f"line {n}: malformed denial constraint")
    name, binds, body = m.groups()
    bindings = []
    for part in binds.split(","):
        bm = _BINDING_RX.match(part)
        if not bm:
            raise SchemaError(f"line {n}: malformed binding {part.strip()!r}")
        bindings.append((bm.group(1), bm.group(2)))
    nm = re.match(r"^not\s*\((.*)\)$", body, re.IGNORECASE | re.DOTALL)
    if nm:
        denied = nm.group(1)
    else:
        # requirement form, e.g. "t.webAddr != ''": deny its negation
        cm = re.match(r"^(.*?)(<=|>=|!=|<>|=|<|>)(.*)$", body, re.DOTALL)
        if not cm or re.search(r"\b(and|or)\b", body, re.IGNORECASE):
            raise SchemaError(f"line {n}: constraint body must be 'not (...)' or a single comparison")
        flip = {"=": "!=", "!=": "=", "<>": "=", "<": ">=", ">": "<=", "<=": ">", ">=": "<"}
        denied = f"{cm.group(1)} {flip[cm.group(2)]} {cm.group(3)}"
    return _dc_from_sql(schema, bindings, denied, name or auto_name, n)


def _parse_fd(schema: Schema, n: int, stmt: str, auto_name: str) -> list[DenialConstraint]:
    m = _FD_RX.match(stmt)
    if not m:
        raise SchemaError(f"line {n}: malformed functional dependency")
    rel = schema.relation(m.group(1))
    lhs = [a.strip() for a in m.group(2).split(",") if a.strip()]
    rhs = [a.strip() for a in m.group(3).split(",") if a.strip()]
    if not lhs or not rhs:
        raise SchemaError(f"line {n}: functional dependency needs attributes on both sides")
    out = []
    for i, b in enumerate(rhs, 1):
        conds = [f"t1.{a} = t2.{a}" for a in lhs] + [f"t1.{b} != t2.{b}"]
        label = auto_name if len(rhs) == 1 else f"{auto_name}_{i}"
        out.extend(_dc_from_sql(schema, [("t1", rel.name), ("t2", rel.name)], " AND ".join(conds), label, n))
    return out


def parse_schema(text: str) -> Schema:
    relations = []
    pending = []
    for n, stmt in _statements(text):
        word = stmt.split(None, 1)[0].lower()
        if word == "relation":
            relations.append(_parse_relation(n, stmt))
        else:
            pending.append((word, n, stmt))
    base = Schema(tuple(relations))
    constraints: list = [PrimaryKey(r.name) for r in relations if r.has_key]
    for i, (word, n, stmt) in enumerate(pending, 1):
        if word == "dc":
            constraints.extend(_parse_dc(base, n, stmt, f"dc{i}"))
        else:
            constraints.extend(_parse_fd(base, n, stmt, f"fd{i}"))
    return Schema(tuple(relations), tuple(constraints))


def load_schema(path) -> Schema:
    return parse_schema(Path(path).read_text(encoding="utf-8"))


def _attr_decl(a: Attribute) -> str:
    if a.kind is Kind.DECIMAL:
        return f"{a.name} decimal({a.scale})"
    return f"{a.name} {a.kind.value}"


def format_schema(schema: Schema) -> str:
    lines = []
    for r in schema.relations:
        line = f"relation {r.name}(" + ", ".join(_attr_decl(a) for a in r.attributes) + ")"
        if r.has_key:
            line += " key(" + ", ".join(r.attributes[k].name for k in r.key) + ")"
        lines.append(line)
    for c in schema.denial_constraints:
        from .query import ConjunctiveQuery

        cq = ConjunctiveQuery(c.atoms, (), c.comparisons)
        aliases = [a.alias or f"t{i}" for i, a in enumerate(c.atoms, 1)]
        conds, _ = _cq_where(cq, schema, aliases)
        binds = ", ".join(f"{al} in {a.relation}" for al, a in zip(aliases, c.atoms))
        name = f"{c.name}: " if c.name else ""
        lines.append(f"dc {name}forall {binds}: not ({' AND '.join(conds) or '1 = 1'})")
    return "\n".join(lines) + "\n"


# -- CSV data -----------------------------------------------------------------

def _data_file(data_dir: Path, relation: str) -> Path | None:
    for cand in (data_dir / f"{relation}.csv", data_dir / f"{relation.lower()}.csv",
                 data_dir / f"{relation.upper()}.csv"):
        if cand.exists():
            return cand
    return None


def read_relation_csv(path: Path, rel: RelationDef) -> list[tuple]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: missing header row") from None
        lowered = [h.strip().lower() for h in header]
        if len(set(lowered)) != len(lowered):
            raise DataError(f"{path}: duplicate column in header")
        expected = [a.name.lower() for a in rel.attributes]
        if sorted(lowered) != sorted(expected):
            raise DataError(f"{path}: header {header} does not match attributes of {rel.name}")
        order = [lowered.index(e) for e in expected]
        rows = []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            values = []
            for attr, col in zip(rel.attributes, order):
                try:
                    values.append(attr.parse(row[col]))
                except DataError as e:
                    raise DataError(f"{path}: row {lineno}, column {attr.name}: {e}") from None
            rows.append(tuple(values))
    return rows


def load_instance(schema_path, data_dir) -> Instance:
    schema = load_schema(schema_path) if not isinstance(schema_path, Schema) else schema_path
    data_dir = Path(data_dir)
    known = {r.name.lower() for r in schema.relations}
    for f in sorted(data_dir.glob("*.csv")):
        if f.stem.lower() not in known:
            raise DataError(f"{f}: no relation {f.stem!r} in schema")
    rows = {}
    for rel in schema.relations:
        path = _data_file(data_dir, rel.name)
        if path is None:
            raise DataError(f"missing data file {rel.name}.csv in {data_dir}")
        rows[rel.name] = read_relation_csv(path, rel)
    return Instance.from_rows(schema, rows)


def relation_csv(instance: Instance, relation: str) -> str:
    rel = instance.schema.relation(relation)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([a.name for a in rel.attributes])
    for fid in instance.relation_fact_ids(rel.name):
        vals = instance.fact(fid).values
        w.writerow([a.format(v) for a, v in zip(rel.attributes, vals)])
    return buf.getvalue()


def write_instance(instance: Instance, out_dir, schema_name: str = "schema.txt") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / schema_name).write_text(format_schema(instance.schema), encoding="utf-8")
    for rel in instance.schema.relations:
        (out / f"{rel.name}.csv").write_text(relation_csv(instance, rel.name), encoding="utf-8")


# -- inconsistency injection --------------------------------------------------

@dataclass(frozen=True)
class GeneratorConfig:
    size: int = 1000  # facts per relation in every repair
    inconsistency: float = 10.0  # percent of facts in key-equal groups of size >= 2
    min_group: int = 2
    max_group: int = 7
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.inconsistency <= 100:
            raise ValueError("inconsistency percentage must be in [0, 100]")
        if self.min_group < 2 or self.max_group < self.min_group:
            raise ValueError("group size bounds must satisfy 2 <= min <= max")
        if self.size < 0:
            raise ValueError("size must be non-negative")


def _perturb(attr: Attribute, value, counter: int, rng: random.Random):
    if attr.kind is Kind.TEXT:
        return f"{value}~{counter}"
    return value + rng.randint(1, 1000) * (1 if rng.random() < 0.5 else -1)


def inject_inconsistency(instance: Instance, config: GeneratorConfig) -> Instance:
    """Add conflicting copies of existing tuples until the configured share of
    each keyed relation's facts sits in key-equal groups of size >= 2."""
    if config.inconsistency == 0:
        return instance
    rng = random.Random(config.seed)
    share = config.inconsistency / 100.0
    rows = instance.rows()
    touched = False
    for rel in instance.schema.keyed_relations:
        nonkey = [p for p in range(rel.arity) if p not in rel.key]
        base = rows[rel.name]
        if not nonkey or not base:
            continue
        if any(len(ids) > 1 for ids in instance.key_index(rel.name).values()):
            raise DataError(f"relation {rel.name} is already inconsistent")
        touched = True
        existing = set(base)
        order = list(range(len(base)))
        rng.shuffle(order)
        added: list[tuple] = []
        dirty = 0
        counter = 0
        for idx in order:
            if dirty >= share * (len(base) + len(added)) - 1e-9:
                break
            size = rng.randint(config.min_group, config.max_group)
            src = base[idx]
            for _ in range(size - 1):
                for _attempt in range(100):
                    counter += 1
                    vals = list(src)
                    p = rng.choice(nonkey)
                    vals[p] = _perturb(rel.attributes[p], vals[p], counter, rng)
                    t = tuple(vals)
                    if t not in existing:
                        break
                else:
                    raise DataError(f"could not create a distinct conflicting tuple in {rel.name}")
                existing.add(t)
                added.append(t)
            dirty += size
        if dirty < share * (len(base) + len(added)) - 1e-9:
            raise DataError(f"{config.inconsistency}% inconsistency infeasible for relation {rel.name}")
        rows[rel.name] = base + added
    if not touched:
        raise DataError("no keyed relation with non-key attributes to make inconsistent")
    return Instance.from_rows(instance.schema, rows)


# -- generators ---------------------------------------------------------------

MAXCUT_SCHEMA = """\
relation R1(A1 integer, B1 text) key(A1)
relation R2(A2 integer, B2 text) key(A2)
relation R3(A1 integer, B1 text, A2 integer, B2 text, C integer) key(A1, B1, A2, B2, C)
"""

MAXCUT_QUERY = (
    "SELECT SUM(R3.C) FROM R1, R2, R3 WHERE R1.A1 = R3.A1 AND R1.B1 = 'red' AND R3.B1 = 'red' "
    "AND R2.A2 = R3.A2 AND R2.B2 = 'blue' AND R3.B2 = 'blue'"
)


def maxcut_instance(n_vertices: int, edges: Iterable[tuple[int, int]]) -> Instance:
    """Instance whose SUM query (MAXCUT_QUERY) has the graph's max cut as lub."""
    if n_vertices < 1:
        raise ValueError("graph needs at least one vertex")
    edges = sorted({(min(u, v), max(u, v)) for u, v in edges})
    for u, v in edges:
        if u == v or not (1 <= u <= n_vertices and 1 <= v <= n_vertices):
            raise ValueError(f"invalid edge ({u}, {v})")
    m = -len(edges) - 1
    vs = range(1, n_vertices + 1)
    rows = {
        "R1": [(v, c) for v in vs for c in ("red", "blue")],
        "R2": [(v, c) for v in vs for c in ("red", "blue")],
        "R3": [(v, "red", v, "blue", m) for v in vs]
        + [t for u, v in edges for t in ((u, "red", v, "blue", 1), (v, "red", u, "blue", 1))],
    }
    return Instance.from_rows(parse_schema(MAXCUT_SCHEMA), rows)


def parse_graph(text: str) -> tuple[int, list[tuple[int, int]]]:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith(("c", "#"))]
    if not lines or not lines[0].startswith("p"):
        raise DataError("graph file must start with 'p <n> <m>'")
    parts = lines[0].split()
    if len(parts) != 3:
        raise DataError("malformed graph header")
    n, m = int(parts[1]), int(parts[2])
    edges = []
    for ln in lines[1:]:
        a = ln.split()
        if len(a) != 2:
            raise DataError(f"malformed edge line {ln!r}")
        edges.append((int(a[0]), int(a[1])))
    if len(edges) != m:
        raise DataError(f"header announces {m} edges, found {len(edges)}")
    return n, edges


def read_graph(path) -> tuple[int, list[tuple[int, int]]]:
    return parse_graph(Path(path).read_text(encoding="utf-8"))


def random_graph(n: int, p: float, rng: random.Random) -> list[tuple[int, int]]:
    return [(u, v) for u in range(1, n + 1) for v in range(u + 1, n + 1) if rng.random() < p]


SYNTHETIC_SCHEMA = """\
relation CUSTOMER(CUSTKEY integer, NAME text, NATION integer, ACCTBAL decimal(2)) key(CUSTKEY)
relation ORDERS(ORDERKEY integer, CUSTKEY integer, TOTALPRICE decimal(2), PRIORITY text) key(ORDERKEY)
"""

SYNTHETIC_QUERY = (
    "SELECT SUM(ORDERS.TOTALPRICE) FROM CUSTOMER, ORDERS WHERE CUSTOMER.CUSTKEY = ORDERS.CUSTKEY "
    "AND CUSTOMER.NATION < 5"
)

_PRIORITIES = ("1-URGENT", "2-HIGH", "3-MEDIUM", "4-NOT SPECIFIED", "5-LOW")


def synthetic_instance(config: GeneratorConfig) -> Instance:
    """Small stand-in for a TPC-H style customer/orders database, consistent
    before injection; ``config.size`` facts per relation in every repair."""
    rng = random.Random(config.seed)
    n = config.size
    customers = [(k, f"Customer#{k:06d}", rng.randrange(25), rng.randint(-99999, 999999)) for k in range(1, n + 1)]
    orders = [(k, rng.randint(1, max(n, 1)), rng.randint(100, 50000000), rng.choice(_PRIORITIES))
              for k in range(1, n + 1)]
    inst = Instance.from_rows(parse_schema(SYNTHETIC_SCHEMA), {"CUSTOMER": customers, "ORDERS": orders})
    return inject_inconsistency(inst, config)


RANDOM_KEY_SCHEMA = """\
relation R(K integer, G text, A integer) key(K)
relation S(K integer, RK integer, B integer) key(K)
"""


def random_key_instance(rng: random.Random, max_groups: int = 12, sizes: Sequence[int] = (2, 3),
                        max_facts: int = 60, values: int = 6) -> Instance:
    """Random two-relation key-only instance: up to ``max_groups`` inconsistent
    key-equal groups with sizes drawn from ``sizes``, padded with consistent
    facts up to at most ``max_facts`` facts in total."""
    schema = parse_schema(RANDOM_KEY_SCHEMA)
    n_bad = rng.randint(1, max_groups)
    group_sizes = [rng.choice(list(sizes)) for _ in range(n_bad)]
    while sum(group_sizes) > max_facts:
        group_sizes.pop()
    room = max_facts - sum(group_sizes)
    n_good = rng.randint(0, min(room, 2 * max_groups))
    plan = [(rng.choice("RS"), s) for s in group_sizes] + [(rng.choice("RS"), 1) for _ in range(n_good)]
    rng.shuffle(plan)
    rows: dict[str, list[tuple]] = {"R": [], "S": []}
    n_keys = {"R": 0, "S": 0}
    n_r = sum(1 for r, _ in plan if r == "R")
    for rel, size in plan:
        n_keys[rel] += 1
        k = n_keys[rel]
        seen = set()
        while len(seen) < size:
            if rel == "R":
                t = (k, rng.choice("xyz"), rng.randint(-values, values))
            else:
                t = (k, rng.randint(1, max(n_r, 1)), rng.randint(-values, values))
            seen.add(t)
        rows[rel].extend(sorted(seen))
    return Instance.from_rows(schema, rows)


RANDOM_DC_SCHEMA = """\
relation P(K integer, A integer, B integer)
relation Q(K integer, C integer)
"""

_DC_TEMPLATES = (
    "dc forall t1 in P, t2 in P: not (t1.A = t2.A and t1.B != t2.B)",
    "dc forall t1 in P, t2 in P: not (t1.A < t2.A and t1.B > t2.B)",
    "dc forall t in P: not (t.B > 3)",
    "dc forall t in Q: not (t.C = 0)",
    "dc forall t1 in P, t2 in Q: not (t1.K = t2.K and t1.A > t2.C)",
    "dc forall t1 in Q, t2 in Q: not (t1.K = t2.K and t1.C != t2.C)",
)


def random_dc_instance(rng: random.Random, max_facts: int = 15, n_dcs: int | None = None,
                       values: int = 4) -> Instance:
    """Random instance over two key-less relations with one or two unary or
    binary denial constraints."""
    k = n_dcs if n_dcs is not None else rng.randint(1, 2)
    chosen = rng.sample(_DC_TEMPLATES, k)
    schema = parse_schema(RANDOM_DC_SCHEMA + "\n".join(chosen) + "\n")
    n = rng.randint(1, max_facts)
    rows: dict[str, set] = {"P": set(), "Q": set()}
    while sum(len(v) for v in rows.values()) < n:
        if rng.random() < 0.6:
            rows["P"].add((rng.randint(1, 4), rng.randint(0, values), rng.randint(0, values)))
        else:
            rows["Q"].add((rng.randint(1, 4), rng.randint(0, values)))
    return Instance.from_rows(schema, {r: sorted(v) for r, v in rows.items()})
