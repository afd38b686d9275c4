from __future__ import annotations

from fractions import Fraction
from itertools import product

import pytest
from hypothesis import given, settings, strategies as st

from cqasat.data_io import parse_schema
from cqasat.relational import (
    Attribute,
    DataError,
    Fact,
    Instance,
    Kind,
    RelationDef,
    Schema,
    SchemaError,
    is_consistent,
    key_equal_groups,
)

SCHEMA = parse_schema("relation R(K integer, V text) key(K)\nrelation S(A integer)\n")


def test_bank_groups(bank):
    # [PAPER] the bank fixture has two violated keys: C2 and A3
    groups = [g for g in key_equal_groups(bank) if not g.consistent]
    assert [(g.relation, g.fact_ids) for g in groups] == [("CUSTOMER", (2, 3)), ("ACCOUNTS", (8, 9))]


def test_keyless_relation_skipped_or_rejected(bank):
    # [TRIVIAL]
    assert all(g.relation != "CUSTACC" for g in key_equal_groups(bank))
    with pytest.raises(SchemaError):
        key_equal_groups(bank, require_keys=True)


def test_consistency_flags(bank):
    # [TRIVIAL]
    assert not is_consistent(bank)
    clean = Instance.from_rows(SCHEMA, {"R": [(1, "a"), (2, "a")], "S": [(1,)]})
    assert is_consistent(clean)


def test_decimal_parse_and_logical():
    # [TRIVIAL]
    a = Attribute("BAL", Kind.DECIMAL, 2)
    assert a.parse("12.5") == 1250
    assert a.logical(1250) == Fraction(25, 2)
    assert a.format(1250) == "12.50"
    with pytest.raises(DataError):
        a.parse("1.234")
    with pytest.raises(DataError):
        a.parse("")


def test_date_roundtrip():
    # [TRIVIAL]
    a = Attribute("D", Kind.DATE)
    assert a.parse("1970-01-11") == 10
    assert a.format(a.parse("1998-09-02")) == "1998-09-02"
    assert a.coerce_constant("1970-01-02") == 1


def test_constant_type_mismatch():
    # [TRIVIAL]
    with pytest.raises(DataError):
        Attribute("K", Kind.INTEGER).coerce_constant("x")
    with pytest.raises(DataError):
        Attribute("T", Kind.TEXT).coerce_constant(3)


def test_relation_validation():
    # [TRIVIAL]
    with pytest.raises(SchemaError):
        RelationDef("R", (Attribute("A"), Attribute("a")))
    with pytest.raises(SchemaError):
        RelationDef("R", (Attribute("A"),), key=(1,))
    with pytest.raises(SchemaError):
        Schema((RelationDef("R", (Attribute("A"),)), RelationDef("r", (Attribute("B"),))))


def test_instance_validation():
    # [TRIVIAL]
    with pytest.raises(DataError):
        Instance(SCHEMA, [Fact(2, "R", (1, "a"))])
    with pytest.raises(DataError):
        Instance(SCHEMA, [Fact(1, "R", (1,))])
    with pytest.raises(DataError):
        Instance.from_rows(SCHEMA, {"R": [(1, "a"), (1, "a")]})
    with pytest.raises(DataError):
        Instance.from_rows(SCHEMA, {"T": [(1,)]})


def test_restricted_renumbers(bank):
    # [TRIVIAL]
    sub = bank.restricted([9, 2])
    assert [f.values for f in sub.facts] == [bank.fact(2).values, bank.fact(9).values]
    assert [f.id for f in sub.facts] == [1, 2]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.sampled_from("abc")), max_size=15, unique=True))
def test_groups_partition_facts(rows):
    # [DERIVED] groups partition the keyed facts and agree exactly on the key
    inst = Instance.from_rows(SCHEMA, {"R": rows})
    groups = key_equal_groups(inst)
    ids = sorted(f for g in groups for f in g.fact_ids)
    assert ids == inst.relation_fact_ids("R")
    for g in groups:
        assert {inst.fact(f).values[0] for f in g.fact_ids} == {g.key_values[0]}
    assert len(groups) == len({r[0] for r in rows})
    # the repair count is the product of group sizes
    n = 1
    for g in groups:
        n *= len(g.fact_ids)
    assert n == len(list(product(*(g.fact_ids for g in groups))))
