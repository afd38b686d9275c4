"""Query AST and a parser for the supported SQL fragment.

Queries are unions of conjunctive queries, optionally wrapped in one
aggregate with optional grouping. Column equalities become shared variables
and equalities with constants are folded into atom arguments, so the
conjunctive core is in the usual datalog shape. Variables are named after
the first column that binds them (``ALIAS.ATTR``) which makes the AST
canonical and lets ``parse(to_sql(q)) == q`` hold.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from decimal import Decimal
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence, Union

from .relational import (
    COMPARISON_OPS,
    Atom,
    Attribute,
    Comparison,
    Const,
    DataError,
    Kind,
    RelationDef,
    Schema,
    SchemaError,
    Var,
)


class QueryError(ValueError):
    pass


class QuerySyntaxError(QueryError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnsupportedQueryError(QueryError):
    def __init__(self, feature: str):
        super().__init__(f"unsupported: {feature}")
        self.feature = feature


# -- expressions --------------------------------------------------------------

@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: object
    right: object

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


Expr = Union[Var, Const, BinOp]


def expr_variables(e) -> set[Var]:
    if isinstance(e, Var):
        return {e}
    if isinstance(e, BinOp):
        return expr_variables(e.left) | expr_variables(e.right)
    if isinstance(e, tuple):
        out: set[Var] = set()
        for item in e:
            out |= expr_variables(item)
        return out
    return set()


def eval_expr(e, env: dict):
    if isinstance(e, Var):
        return env[e]
    if isinstance(e, Const):
        return e.value
    l = eval_expr(e.left, env)
    r = eval_expr(e.right, env)
    if e.op == "+":
        return l + r
    if e.op == "-":
        return l - r
    if e.op == "*":
        return l * r
    if r == 0:
        raise ZeroDivisionError("division by zero in query expression")
    return Fraction(l) / Fraction(r)


def _like_regex(pattern: str) -> re.Pattern:
    out = []
    for ch in pattern:
        if ch == "%":
            out.append(".*")
        elif ch == "_":
            out.append(".")
        else:
            out.append(re.escape(ch))
    return re.compile("".join(out), re.DOTALL)


_LIKE_CACHE: dict[str, re.Pattern] = {}


def eval_comparison(c: Comparison, env: dict) -> bool:
    left = eval_expr(c.left, env)
    op = c.op
    if op == "in":
        return left in c.right
    if op == "like":
        rx = _LIKE_CACHE.get(c.right)
        if rx is None:
            rx = _LIKE_CACHE[c.right] = _like_regex(c.right)
        return isinstance(left, str) and rx.fullmatch(left) is not None
    right = eval_expr(c.right, env)
    if isinstance(left, str) != isinstance(right, str):
        raise QueryError(f"cannot compare {left!r} with {right!r}")
    if op == "=":
        return left == right
    if op == "!=":
        return left != right
    if op == "<":
        return left < right
    if op == ">":
        return left > right
    if op == "<=":
        return left <= right
    return left >= right


def comparison_variables(c: Comparison) -> set[Var]:
    right = c.right if c.op not in ("in", "like") else ()
    return expr_variables(c.left) | expr_variables(right)


# -- query AST ----------------------------------------------------------------

@dataclass(frozen=True)
class ConjunctiveQuery:
    atoms: tuple[Atom, ...]
    head: tuple[Expr, ...] = ()
    comparisons: tuple[Comparison, ...] = ()

    def __post_init__(self):
        if not self.atoms:
            raise QueryError("conjunctive query needs at least one atom")
        bound = set().union(*(a.variables() for a in self.atoms))
        for e in self.head:
            if expr_variables(e) - bound:
                raise QueryError("head uses a variable that occurs in no atom")
        for c in self.comparisons:
            if comparison_variables(c) - bound:
                raise QueryError("comparison uses a variable that occurs in no atom")

    @property
    def arity(self) -> int:
        return len(self.head)

    @property
    def relations(self) -> tuple[str, ...]:
        return tuple(a.relation for a in self.atoms)


@dataclass(frozen=True)
class UnionQuery:
    disjuncts: tuple[ConjunctiveQuery, ...]

    def __post_init__(self):
        if not self.disjuncts:
            raise QueryError("union query needs at least one disjunct")
        arities = {d.arity for d in self.disjuncts}
        if len(arities) != 1:
            raise QueryError("disjuncts of a union must have the same arity")

    @property
    def arity(self) -> int:
        return self.disjuncts[0].arity

    @property
    def relations(self) -> set[str]:
        return {r for d in self.disjuncts for r in d.relations}

    def with_head(self, positions: Sequence[int]) -> "UnionQuery":
        return UnionQuery(tuple(replace(d, head=tuple(d.head[p] for p in positions)) for d in self.disjuncts))

    def with_filter(self, position: int, value) -> "UnionQuery":
        """Restrict head position ``position`` to ``value`` in every disjunct."""
        out = []
        for d in self.disjuncts:
            cmp = Comparison(d.head[position], "=", Const(value))
            out.append(replace(d, comparisons=d.comparisons + (cmp,)))
        return UnionQuery(tuple(out))


class AggOp(str, Enum):
    COUNT_STAR = "COUNT_STAR"
    COUNT = "COUNT"
    SUM = "SUM"
    MIN = "MIN"
    MAX = "MAX"


@dataclass(frozen=True)
class AggQuery:
    """Aggregate over ``underlying``, whose head is the grouping expressions
    followed by the aggregation expression (absent for COUNT(*))."""

    underlying: UnionQuery
    op: AggOp
    distinct: bool = False
    agg_position: int | None = None
    group_positions: tuple[int, ...] = ()
    top_k: int | None = None
    # (index into group_positions, descending)
    order_by: tuple[tuple[int, bool], ...] = ()

    def __post_init__(self):
        if self.op is AggOp.COUNT_STAR:
            if self.agg_position is not None:
                raise QueryError("COUNT(*) takes no aggregation attribute")
            if self.distinct:
                raise QueryError("COUNT(*) cannot be DISTINCT")
        elif self.agg_position is None or not 0 <= self.agg_position < self.underlying.arity:
            raise QueryError(f"{self.op.value} needs a valid aggregation position")
        if self.op in (AggOp.MIN, AggOp.MAX) and self.distinct:
            raise QueryError("DISTINCT is a no-op for MIN/MAX and is not stored")
        if any(not 0 <= p < self.underlying.arity for p in self.group_positions):
            raise QueryError("invalid grouping position")
        if self.top_k is not None and self.top_k < 1:
            raise QueryError("TOP k needs k >= 1")
        if any(not 0 <= i < len(self.group_positions) for i, _ in self.order_by):
            raise QueryError("ORDER BY refers to a non-grouping column")

    @property
    def grouped(self) -> bool:
        return bool(self.group_positions)


Query = Union[AggQuery, UnionQuery]


def derive_witness_query(q: AggQuery) -> UnionQuery:
    """The union whose witnesses feed the encodings: grouping expressions stay
    free, then the aggregation expression unless the operator is COUNT(*)."""
    positions = list(q.group_positions)
    if q.op is not AggOp.COUNT_STAR:
        positions.append(q.agg_position)
    return q.underlying.with_head(positions)


def witness_layout(q: AggQuery) -> tuple[int, int | None]:
    """(number of group columns, value column) in the derived witness query."""
    ng = len(q.group_positions)
    return ng, (None if q.op is AggOp.COUNT_STAR else ng)


def grouping_query(q: AggQuery) -> UnionQuery:
    return q.underlying.with_head(q.group_positions)


def specialize_group(q: AggQuery, key: tuple) -> AggQuery:
    """Scalar query restricted to one group: Z = key filters, no grouping."""
    u = q.underlying
    for pos, value in zip(q.group_positions, key):
        u = u.with_filter(pos, value)
    return replace(q, underlying=u, group_positions=(), top_k=None, order_by=())


# -- tokenizer ----------------------------------------------------------------

KEYWORDS = {
    "SELECT", "FROM", "WHERE", "AND", "OR", "NOT", "GROUP", "BY", "ORDER", "ASC", "DESC",
    "TOP", "DISTINCT", "AS", "IN", "BETWEEN", "LIKE", "JOIN", "INNER", "LEFT", "RIGHT",
    "FULL", "OUTER", "ON", "HAVING", "EXISTS", "UNION", "LIMIT", "CROSS",
}
AGGREGATES = {"COUNT", "SUM", "MIN", "MAX", "AVG"}

_TOKEN_RX = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>\d+\.\d*|\.\d+|\d+)
  | (?P<str>'(?:[^']|'')*')
  | (?P<ident>[A-Za-z_][A-Za-z0-9_#$]*|"[^"]+")
  | (?P<op><>|!=|<=|>=|[=<>(),.*+\-/;])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # num, str, ident, kw, op, end
    text: str
    pos: int


def tokenize(text: str) -> list[Token]:
    out = []
    i = 0
    while i < len(text):
        m = _TOKEN_RX.match(text, i)
        if not m:
            raise QuerySyntaxError(f"unexpected character {text[i]!r}", i)
        kind = m.lastgroup
        s = m.group()
        if kind == "ident":
            if s.startswith('"'):
                s = s[1:-1]
            elif s.upper() in KEYWORDS:
                kind = "kw"
                s = s.upper()
        elif kind == "str":
            s = s[1:-1].replace("''", "'")
        if kind != "ws":
            out.append(Token(kind, s, i))
        i = m.end()
    out.append(Token("end", "", len(text)))
    return out


# -- raw parse tree -----------------------------------------------------------

@dataclass(frozen=True)
class _Col:
    qualifier: str | None
    name: str
    pos: int


@dataclass(frozen=True)
class _Pred:
    left: object
    op: str
    right: object


@dataclass(frozen=True)
class _And:
    items: tuple


@dataclass(frozen=True)
class _Or:
    items: tuple


@dataclass
class _Select:
    top: int | None = None
    items: list = field(default_factory=list)  # (_Col | expr) or ("agg", name, distinct, expr|None)
    from_items: list = field(default_factory=list)  # (relation, alias, pos)
    where: object = None
    group_by: list = field(default_factory=list)
    order_by: list = field(default_factory=list)  # (_Col, desc)


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def at_kw(self, *words) -> bool:
        return self.tok.kind == "kw" and self.tok.text in words

    def at_op(self, *ops) -> bool:
        return self.tok.kind == "op" and self.tok.text in ops

    def expect_kw(self, word):
        if not self.at_kw(word):
            raise QuerySyntaxError(f"expected {word}, found {self.tok.text or 'end of input'!r}", self.tok.pos)
        return self.advance()

    def expect_op(self, op):
        if not self.at_op(op):
            raise QuerySyntaxError(f"expected {op!r}, found {self.tok.text or 'end of input'!r}", self.tok.pos)
        return self.advance()

    def expect_ident(self) -> Token:
        if self.tok.kind != "ident":
            raise QuerySyntaxError(f"expected identifier, found {self.tok.text or 'end of input'!r}", self.tok.pos)
        return self.advance()

    def parse(self) -> _Select:
        sel = _Select()
        self.expect_kw("SELECT")
        if self.at_kw("DISTINCT"):
            self.advance()
        if self.at_kw("TOP"):
            self.advance()
            t = self.advance()
            if t.kind != "num" or not t.text.isdigit():
                raise QuerySyntaxError("TOP needs an integer", t.pos)
            sel.top = int(t.text)
        sel.items.append(self.select_item())
        while self.at_op(","):
            self.advance()
            sel.items.append(self.select_item())
        self.expect_kw("FROM")
        self.from_clause(sel)
        if self.at_kw("WHERE"):
            self.advance()
            cond = self.condition()
            sel.where = cond if sel.where is None else _And((sel.where, cond))
        if self.at_kw("GROUP"):
            self.advance()
            self.expect_kw("BY")
            sel.group_by.append(self.column())
            while self.at_op(","):
                self.advance()
                sel.group_by.append(self.column())
        if self.at_kw("HAVING"):
            raise UnsupportedQueryError("HAVING")
        if self.at_kw("ORDER"):
            self.advance()
            self.expect_kw("BY")
            while True:
                if self.tok.kind == "ident" and self.tok.text.upper() in AGGREGATES:
                    raise UnsupportedQueryError("ORDER BY on aggregate values")
                col = self.column()
                desc = False
                if self.at_kw("ASC", "DESC"):
                    desc = self.advance().text == "DESC"
                sel.order_by.append((col, desc))
                if not self.at_op(","):
                    break
                self.advance()
        if self.at_kw("UNION"):
            raise UnsupportedQueryError("UNION of SELECT blocks (use OR in WHERE)")
        if self.at_kw("LIMIT"):
            raise UnsupportedQueryError("LIMIT (use TOP k)")
        if self.at_op(";"):
            self.advance()
        if self.tok.kind != "end":
            raise QuerySyntaxError(f"unexpected {self.tok.text!r}", self.tok.pos)
        return sel

    def select_item(self):
        t = self.tok
        if t.kind == "ident" and t.text.upper() in AGGREGATES and self.tokens[self.i + 1].text == "(":
            name = t.text.upper()
            if name == "AVG":
                raise UnsupportedQueryError("AVG aggregate")
            self.advance()
            self.expect_op("(")
            distinct = False
            if self.at_kw("DISTINCT"):
                self.advance()
                distinct = True
            if self.at_op("*"):
                if name != "COUNT" or distinct:
                    raise QuerySyntaxError(f"{name}(*) is not valid", self.tok.pos)
                self.advance()
                arg = None
            else:
                arg = self.expr()
            self.expect_op(")")
            item = ("agg", name, distinct, arg, t.pos)
        elif self.at_op("*"):
            raise UnsupportedQueryError("SELECT *")
        else:
            item = self.expr()
        if self.at_kw("AS"):
            self.advance()
            self.expect_ident()
        return item

    def from_clause(self, sel: _Select):
        sel.from_items.append(self.from_item())
        while True:
            if self.at_op(","):
                self.advance()
                sel.from_items.append(self.from_item())
            elif self.at_kw("LEFT", "RIGHT", "FULL", "OUTER"):
                raise UnsupportedQueryError(f"{self.tok.text} JOIN")
            elif self.at_kw("CROSS"):
                raise UnsupportedQueryError("CROSS JOIN")
            elif self.at_kw("JOIN", "INNER"):
                if self.advance().text == "INNER":
                    self.expect_kw("JOIN")
                sel.from_items.append(self.from_item())
                self.expect_kw("ON")
                cond = self.condition()
                sel.where = cond if sel.where is None else _And((sel.where, cond))
            else:
                return

    def from_item(self):
        if self.at_op("("):
            raise UnsupportedQueryError("nested subquery in FROM")
        t = self.expect_ident()
        alias = t.text
        if self.at_kw("AS"):
            self.advance()
            alias = self.expect_ident().text
        elif self.tok.kind == "ident":
            alias = self.advance().text
        return (t.text, alias, t.pos)

    def column(self) -> _Col:
        t = self.expect_ident()
        if self.at_op("."):
            self.advance()
            name = self.expect_ident()
            return _Col(t.text, name.text, t.pos)
        return _Col(None, t.text, t.pos)

    # conditions
    def condition(self):
        items = [self.conjunction()]
        while self.at_kw("OR"):
            self.advance()
            items.append(self.conjunction())
        return items[0] if len(items) == 1 else _Or(tuple(items))

    def conjunction(self):
        items = [self.cond_unit()]
        while self.at_kw("AND"):
            self.advance()
            items.append(self.cond_unit())
        return items[0] if len(items) == 1 else _And(tuple(items))

    def cond_unit(self):
        if self.at_kw("NOT"):
            raise UnsupportedQueryError("negation (NOT)")
        if self.at_kw("EXISTS"):
            raise UnsupportedQueryError("nested subquery (EXISTS)")
        if self.at_op("("):
            if self.tokens[self.i + 1].kind == "kw" and self.tokens[self.i + 1].text == "SELECT":
                raise UnsupportedQueryError("nested subquery")
            save = self.i
            self.advance()
            try:
                cond = self.condition()
                self.expect_op(")")
            except QuerySyntaxError:
                self.i = save
            else:
                if not self.at_op("=", "!=", "<>", "<", ">", "<=", ">=", "+", "-", "*", "/") and not self.at_kw(
                        "IN", "BETWEEN", "LIKE"):
                    return cond
                self.i = save
        return self.predicate()

    def predicate(self):
        left = self.expr()
        if self.at_kw("NOT"):
            raise UnsupportedQueryError("negation (NOT)")
        if self.at_kw("BETWEEN"):
            self.advance()
            lo = self.expr()
            self.expect_kw("AND")
            hi = self.expr()
            return _And((_Pred(left, ">=", lo), _Pred(left, "<=", hi)))
        if self.at_kw("IN"):
            self.advance()
            self.expect_op("(")
            if self.at_kw("SELECT"):
                raise UnsupportedQueryError("nested subquery (IN SELECT)")
            values = [self.expr()]
            while self.at_op(","):
                self.advance()
                values.append(self.expr())
            self.expect_op(")")
            return _Pred(left, "in", tuple(values))
        if self.at_kw("LIKE"):
            self.advance()
            t = self.advance()
            if t.kind != "str":
                raise QuerySyntaxError("LIKE needs a string pattern", t.pos)
            return _Pred(left, "like", t.text)
        if not self.at_op("=", "!=", "<>", "<", ">", "<=", ">="):
            raise QuerySyntaxError(f"expected comparison operator, found {self.tok.text or 'end of input'!r}",
                                   self.tok.pos)
        op = self.advance().text
        if op == "<>":
            op = "!="
        if self.at_op("(") and self.tokens[self.i + 1].text == "SELECT":
            raise UnsupportedQueryError("nested subquery")
        return _Pred(left, op, self.expr())

    # arithmetic
    def expr(self):
        node = self.term()
        while self.at_op("+", "-"):
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.at_op("*", "/"):
            op = self.advance().text
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        t = self.tok
        if self.at_op("-"):
            self.advance()
            inner = self.factor()
            if isinstance(inner, Const) and not isinstance(inner.value, str):
                return Const(-inner.value)
            return BinOp("-", Const(0), inner)
        if self.at_op("("):
            if self.tokens[self.i + 1].kind == "kw" and self.tokens[self.i + 1].text == "SELECT":
                raise UnsupportedQueryError("nested subquery")
            self.advance()
            node = self.expr()
            self.expect_op(")")
            return node
        if t.kind == "num":
            self.advance()
            if "." in t.text:
                return Const(_normalize_number(Fraction(Decimal(t.text))))
            return Const(int(t.text))
        if t.kind == "str":
            self.advance()
            return Const(t.text)
        if t.kind == "ident":
            if self.tokens[self.i + 1].text == "(":
                raise UnsupportedQueryError(f"function call {t.text}()")
            return self.column()
        raise QuerySyntaxError(f"unexpected {t.text or 'end of input'!r}", t.pos)


def _normalize_number(v):
    if isinstance(v, Fraction) and v.denominator == 1:
        return int(v)
    return v


# -- semantic analysis --------------------------------------------------------

class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # keep the smaller slot as representative so naming is canonical
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


MAX_DISJUNCTS = 256

_FALSE = Comparison(Const(1), "=", Const(0))


def _dnf(node) -> list[list[_Pred]]:
    if node is None:
        return [[]]
    if isinstance(node, _Pred):
        return [[node]]
    if isinstance(node, _Or):
        out = []
        for item in node.items:
            out.extend(_dnf(item))
            if len(out) > MAX_DISJUNCTS:
                raise UnsupportedQueryError(f"WHERE clause expands to more than {MAX_DISJUNCTS} disjuncts")
        return out
    out = [[]]
    for item in node.items:
        parts = _dnf(item)
        out = [a + b for a in out for b in parts]
        if len(out) > MAX_DISJUNCTS:
            raise UnsupportedQueryError(f"WHERE clause expands to more than {MAX_DISJUNCTS} disjuncts")
    return out


class _Scope:
    def __init__(self, schema: Schema, from_items):
        self.schema = schema
        self.items: list[tuple[str, RelationDef]] = []
        seen = set()
        for rel_name, alias, pos in from_items:
            try:
                rel = schema.relation(rel_name)
            except SchemaError as e:
                raise QuerySyntaxError(str(e), pos) from None
            if alias.lower() in seen:
                raise QuerySyntaxError(f"duplicate FROM alias {alias!r}", pos)
            seen.add(alias.lower())
            self.items.append((alias, rel))

    def resolve(self, col: _Col) -> tuple[int, int]:
        if col.qualifier is not None:
            hits = [i for i, (alias, _) in enumerate(self.items) if alias.lower() == col.qualifier.lower()]
            if not hits:
                hits = [i for i, (alias, rel) in enumerate(self.items)
                        if rel.name.lower() == col.qualifier.lower() and alias == rel.name]
            if not hits:
                raise QuerySyntaxError(f"unknown table or alias {col.qualifier!r}", col.pos)
            i = hits[0]
            try:
                return i, self.items[i][1].position(col.name)
            except SchemaError as e:
                raise QuerySyntaxError(str(e), col.pos) from None
        hits = []
        for i, (_, rel) in enumerate(self.items):
            try:
                hits.append((i, rel.position(col.name)))
            except SchemaError:
                pass
        if not hits:
            raise QuerySyntaxError(f"unknown column {col.name!r}", col.pos)
        if len(hits) > 1:
            raise QuerySyntaxError(f"ambiguous column {col.name!r}", col.pos)
        return hits[0]

    def attribute(self, slot: tuple[int, int]) -> Attribute:
        return self.items[slot[0]][1].attributes[slot[1]]

    def slot_name(self, slot: tuple[int, int]) -> str:
        alias, rel = self.items[slot[0]]
        return f"{alias}.{rel.attributes[slot[1]].name}"


def _fold(e):
    """Constant-fold arithmetic over literals."""
    if isinstance(e, BinOp):
        l, r = _fold(e.left), _fold(e.right)
        if isinstance(l, Const) and isinstance(r, Const):
            if isinstance(l.value, str) or isinstance(r.value, str):
                raise QueryError("arithmetic on text constant")
            return Const(_normalize_number(eval_expr(BinOp(e.op, l, r), {})))
        return BinOp(e.op, l, r)
    return e


def _map_expr(e, fn):
    if isinstance(e, _Col):
        return fn(e)
    if isinstance(e, BinOp):
        return BinOp(e.op, _map_expr(e.left, fn), _map_expr(e.right, fn))
    return e


class _Builder:
    """Turns one DNF disjunct into a ConjunctiveQuery."""

    def __init__(self, scope: _Scope, preds: list[_Pred]):
        self.scope = scope
        self.uf = _UnionFind()
        for i, (_, rel) in enumerate(scope.items):
            for p in range(rel.arity):
                self.uf.find((i, p))
        self.consts: dict[tuple[int, int], object] = {}
        self.false_facts: list[Comparison] = []
        self.rest: list[_Pred] = []
        pending_consts = []
        for pr in preds:
            left, right = _fold(pr.left), _fold(pr.right) if pr.op not in ("in", "like") else pr.right
            if pr.op == "=" and isinstance(left, _Col) and isinstance(right, _Col):
                self.uf.union(scope.resolve(left), scope.resolve(right))
            elif pr.op == "=" and isinstance(left, _Col) and isinstance(right, Const):
                pending_consts.append((scope.resolve(left), right.value, left.pos))
            elif pr.op == "=" and isinstance(right, _Col) and isinstance(left, Const):
                pending_consts.append((scope.resolve(right), left.value, right.pos))
            else:
                self.rest.append(_Pred(left, pr.op, right))
        for slot, value, pos in pending_consts:
            root = self.uf.find(slot)
            value = self._coerce(value, root, pos)
            if root in self.consts and self.consts[root] != value:
                self.false_facts.append(_FALSE)
            else:
                self.consts[root] = value

    def _coerce(self, value, slot, pos):
        attr = self.scope.attribute(slot)
        try:
            return attr.coerce_constant(value)
        except DataError as e:
            raise QuerySyntaxError(str(e), pos) from None

    def term(self, slot) -> Var | Const:
        root = self.uf.find(slot)
        if root in self.consts:
            return Const(self.consts[root])
        return Var(self.scope.slot_name(root))

    def col_expr(self, col: _Col):
        return self.term(self.scope.resolve(col))

    def expr(self, e):
        return _map_expr(_fold(e), self.col_expr)

    def comparisons(self) -> list[Comparison]:
        out = list(self.false_facts)
        for pr in self.rest:
            left = pr.left
            slot = self.scope.resolve(left) if isinstance(left, _Col) else None
            lexpr = self.expr(left)
            if pr.op == "in":
                values = []
                for v in pr.right:
                    v = _fold(v)
                    if not isinstance(v, Const):
                        raise UnsupportedQueryError("IN list with non-constant members")
                    values.append(self._coerce(v.value, slot, left.pos) if slot else v.value)
                cmp = Comparison(lexpr, "in", tuple(dict.fromkeys(values)))
            elif pr.op == "like":
                cmp = Comparison(lexpr, "like", pr.right)
            else:
                right = pr.right
                rslot = self.scope.resolve(right) if isinstance(right, _Col) else None
                rexpr = self.expr(right)
                if slot is not None and isinstance(rexpr, Const):
                    rexpr = Const(self._coerce(rexpr.value, slot, left.pos))
                if rslot is not None and isinstance(lexpr, Const):
                    lexpr = Const(self._coerce(lexpr.value, rslot, right.pos))
                cmp = Comparison(lexpr, pr.op, rexpr)
            if isinstance(cmp.left, Const) and (cmp.op in ("in", "like") or isinstance(cmp.right, Const)):
                if eval_comparison(cmp, {}):
                    continue
                cmp = _FALSE
            out.append(cmp)
        # a conjunction with a false member is printed and stored as just that member
        return [_FALSE] if _FALSE in out else out

    def atoms(self) -> tuple[Atom, ...]:
        out = []
        for i, (alias, rel) in enumerate(self.scope.items):
            terms = tuple(self.term((i, p)) for p in range(rel.arity))
            out.append(Atom(rel.name, terms, alias))
        return tuple(out)


def _expr_kind(e, scope: _Scope, builder: _Builder) -> Kind | None:
    if isinstance(e, _Col):
        return scope.attribute(scope.resolve(e)).kind
    if isinstance(e, Const):
        return Kind.TEXT if isinstance(e.value, str) else Kind.DECIMAL
    if isinstance(e, BinOp):
        for side in (e.left, e.right):
            if _expr_kind(side, scope, builder) is Kind.TEXT:
                raise QueryError("arithmetic on a text column")
        return Kind.DECIMAL
    return None


def parse_query(text: str, schema: Schema) -> Query:
    """Parse the SQL fragment into an AggQuery (one aggregate) or a UnionQuery."""
    sel = _Parser(text).parse()
    scope = _Scope(schema, sel.from_items)
    aggs = [it for it in sel.items if isinstance(it, tuple)]
    plain = [it for it in sel.items if not isinstance(it, tuple)]
    if len(aggs) > 1:
        raise UnsupportedQueryError("more than one aggregate in SELECT")
    disjuncts = _dnf(sel.where)
    builders = [_Builder(scope, d) for d in disjuncts]

    if not aggs:
        if sel.group_by:
            raise UnsupportedQueryError("GROUP BY without an aggregate")
        if sel.top is not None or sel.order_by:
            raise UnsupportedQueryError("TOP/ORDER BY without an aggregate")
        cqs = tuple(ConjunctiveQuery(b.atoms(), tuple(b.expr(e) for e in plain), tuple(b.comparisons()))
                    for b in builders)
        return UnionQuery(cqs)

    _, name, distinct, arg, apos = aggs[0]
    group_slots = [scope.resolve(c) for c in sel.group_by]
    if len(set(group_slots)) != len(group_slots):
        raise QuerySyntaxError("repeated GROUP BY column", sel.group_by[0].pos)
    for it in plain:
        if not isinstance(it, _Col) or scope.resolve(it) not in group_slots:
            pos = it.pos if isinstance(it, _Col) else apos
            raise QuerySyntaxError("non-aggregated SELECT column must appear in GROUP BY", pos)

    if arg is None:
        op = AggOp.COUNT_STAR
    else:
        op = AggOp(name)
        kind = _expr_kind(arg, scope, builders[0])
        if op in (AggOp.SUM, AggOp.MIN, AggOp.MAX) and kind is Kind.TEXT:
            raise QueryError(f"{op.value} needs a numeric argument")
    if op in (AggOp.MIN, AggOp.MAX):
        distinct = False

    order_by = []
    for col, desc in sel.order_by:
        slot = scope.resolve(col)
        if slot not in group_slots:
            raise UnsupportedQueryError("ORDER BY on a non-grouping column")
        order_by.append((group_slots.index(slot), desc))
    if sel.top is not None and not group_slots:
        raise UnsupportedQueryError("TOP k on a scalar aggregate")

    cqs = []
    for b in builders:
        head = [b.term(s) for s in group_slots]
        if arg is not None:
            head.append(b.expr(arg))
        cqs.append(ConjunctiveQuery(b.atoms(), tuple(head), tuple(b.comparisons())))
    ng = len(group_slots)
    return AggQuery(
        underlying=UnionQuery(tuple(cqs)),
        op=op,
        distinct=distinct,
        agg_position=None if arg is None else ng,
        group_positions=tuple(range(ng)),
        top_k=sel.top,
        order_by=tuple(order_by),
    )


# -- canonical printer --------------------------------------------------------

def _fmt_const(v) -> str:
    if isinstance(v, str):
        return "'" + v.replace("'", "''") + "'"
    if isinstance(v, Fraction):
        if v.denominator == 1:
            return str(v.numerator)
        d = v.denominator
        twos = fives = 0
        while d % 2 == 0:
            d //= 2
            twos += 1
        while d % 5 == 0:
            d //= 5
            fives += 1
        if d == 1:
            places = max(twos, fives)
            s = str(Decimal(v.numerator * 10 ** places // v.denominator).scaleb(-places))
            return s if v >= 0 else f"({s})"
        return f"({v.numerator} / {v.denominator})"
    if isinstance(v, bool):
        return str(int(v))
    return str(v) if v >= 0 else f"({v})"


def _fmt_expr(e, names: dict) -> str:
    if isinstance(e, Var):
        return names[e]
    if isinstance(e, Const):
        return _fmt_const(e.value)
    left = _fmt_expr(e.left, names)
    right = _fmt_expr(e.right, names)
    if isinstance(e.right, BinOp):
        right = f"({right})"
    if isinstance(e.left, BinOp) and e.op in ("*", "/") and e.left.op in ("+", "-"):
        left = f"({left})"
    return f"{left} {e.op} {right}"


def _fmt_comparison(c: Comparison, names: dict) -> str:
    left = _fmt_expr(c.left, names)
    if c.op == "in":
        return f"{left} IN (" + ", ".join(_fmt_const(v) for v in c.right) + ")"
    if c.op == "like":
        return f"{left} LIKE {_fmt_const(c.right)}"
    return f"{left} {c.op} {_fmt_expr(c.right, names)}"


def _cq_where(cq: ConjunctiveQuery, schema: Schema, aliases: list[str]) -> tuple[list[str], dict]:
    names: dict[Var, str] = {}
    conds = []
    for alias, atom in zip(aliases, cq.atoms):
        rel = schema.relation(atom.relation)
        for p, t in enumerate(atom.terms):
            ref = f"{alias}.{rel.attributes[p].name}"
            if isinstance(t, Const):
                conds.append(f"{ref} = {_fmt_const(t.value)}")
            elif t in names:
                conds.append(f"{ref} = {names[t]}")
            else:
                names[t] = ref
    conds.extend(_fmt_comparison(c, names) for c in cq.comparisons)
    return conds, names


def _aliases(cq: ConjunctiveQuery) -> list[str]:
    out = []
    used = set()
    for a in cq.atoms:
        alias = a.alias or a.relation
        base, n = alias, 2
        while alias.lower() in used:
            alias = f"{base}_{n}"
            n += 1
        used.add(alias.lower())
        out.append(alias)
    return out


def to_sql(q: Query, schema: Schema) -> str:
    """Canonical SQL text for a query; ``parse_query(to_sql(q), schema) == q``
    for every query produced by the parser."""
    u = q.underlying if isinstance(q, AggQuery) else q
    first = u.disjuncts[0]
    aliases = _aliases(first)
    for d in u.disjuncts[1:]:
        if [a.relation for a in d.atoms] != [a.relation for a in first.atoms] or _aliases(d) != aliases:
            raise QueryError("disjuncts do not share one FROM list; cannot print as a single SELECT")
    from_sql = ", ".join(a.relation if alias == a.relation else f"{a.relation} AS {alias}"
                         for alias, a in zip(aliases, first.atoms))
    blocks = []
    all_names = []
    for d in u.disjuncts:
        conds, names = _cq_where(d, schema, aliases)
        all_names.append(names)
        blocks.append(conds or ["1 = 1"])

    def head_refs(positions: Iterable[int]) -> list[str]:
        # grouping heads must be printable as columns; use the first disjunct's naming
        out = []
        for p in positions:
            e = first.head[p]
            if isinstance(e, Var):
                out.append(all_names[0][e])
            elif isinstance(e, Const):
                out.append(_const_column(first, e, schema, aliases, u, p))
            else:
                out.append(_fmt_expr(e, all_names[0]))
        return out

    if isinstance(q, AggQuery):
        groups = head_refs(q.group_positions)
        if q.op is AggOp.COUNT_STAR:
            agg = "COUNT(*)"
        else:
            arg = head_refs([q.agg_position])[0]
            agg = f"{q.op.value}({'DISTINCT ' if q.distinct else ''}{arg})"
        select = ", ".join(groups + [agg])
        top = f"TOP {q.top_k} " if q.top_k is not None else ""
    else:
        select = ", ".join(head_refs(range(u.arity)))
        top = ""
        groups = []
    sql = f"SELECT {top}{select} FROM {from_sql}"
    if len(blocks) == 1:
        if blocks[0] != ["1 = 1"]:
            sql += " WHERE " + " AND ".join(blocks[0])
    else:
        sql += " WHERE " + " OR ".join("(" + " AND ".join(b) + ")" for b in blocks)
    if groups:
        sql += " GROUP BY " + ", ".join(groups)
    if isinstance(q, AggQuery) and q.order_by:
        sql += " ORDER BY " + ", ".join(groups[i] + (" DESC" if desc else " ASC") for i, desc in q.order_by)
    return sql


def _const_column(cq: ConjunctiveQuery, c: Const, schema: Schema, aliases, u: UnionQuery, p: int) -> str:
    # a head position that became a constant through WHERE folding; print the column it came from
    for alias, atom in zip(aliases, cq.atoms):
        rel = schema.relation(atom.relation)
        for pos, t in enumerate(atom.terms):
            if t == c:
                return f"{alias}.{rel.attributes[pos].name}"
    return _fmt_const(c.value)
