from __future__ import annotations

import random
from itertools import combinations

import pytest

from cqasat.data_io import parse_schema, random_dc_instance, random_key_instance
from cqasat.evaluation import minimal_violations
from cqasat.oracle import (
    OracleLimitError,
    enumerate_repairs,
    oracle_range_answer,
    repair_count_estimate,
    repair_matrix,
)
from cqasat.query import parse_query
from cqasat.relational import Instance, is_consistent

from conftest import CITY_MATCH_COUNT, C2_SUM, SF_MIN, SF_SUM


def test_bank_repairs(bank):
    # [DERIVED] 2 x 2 product over groups {f2,f3}, {f8,f9}
    reps = enumerate_repairs(bank)
    assert len(reps) == 4 == repair_count_estimate(bank)
    assert {frozenset({2, 3}) & r for r in reps} == {frozenset({2}), frozenset({3})}
    assert all(len(r) == 12 for r in reps)


def test_consistent_instance_single_repair():
    # [TRIVIAL]
    s = parse_schema("relation R(K integer) key(K)\n")
    inst = Instance.from_rows(s, {"R": [(1,), (2,)]})
    assert enumerate_repairs(inst) == [frozenset({1, 2})]


def test_limit_refusal(bank):
    # [TRIVIAL]
    with pytest.raises(OracleLimitError):
        enumerate_repairs(bank, limit=3)
    with pytest.raises(OracleLimitError):
        repair_matrix(bank, limit=3)


def _power_set_repairs(inst):
    """Maximal consistent subsets by scanning every subset."""
    n = len(inst)
    consistent = []
    for k in range(n + 1):
        for c in combinations(range(1, n + 1), k):
            if is_consistent(inst.restricted(c)) if c else True:
                consistent.append(frozenset(c))
    return {s for s in consistent if not any(s < t for t in consistent)}


@pytest.mark.parametrize("seed", range(15))
def test_dc_repairs_power_set(seed):
    # [DERIVED] power-set oracle
    inst = random_dc_instance(random.Random(seed), max_facts=8)
    assert set(enumerate_repairs(inst)) == _power_set_repairs(inst)


@pytest.mark.parametrize("seed", range(15))
def test_repairs_consistent_and_maximal(seed):
    # [DERIVED] direct assertion per repair
    inst = random_dc_instance(random.Random(seed))
    for r in enumerate_repairs(inst):
        assert is_consistent(inst.restricted(r)) if r else True
        for f in set(range(1, len(inst) + 1)) - r:
            assert not is_consistent(inst.restricted(r | {f}))


@pytest.mark.parametrize("seed", range(10))
def test_key_mode_count_is_product(seed):
    # [DERIVED]
    inst = random_key_instance(random.Random(seed), max_groups=5, max_facts=20)
    m = repair_matrix(inst)
    assert m.shape[0] == repair_count_estimate(inst) == len(enumerate_repairs(inst))
    assert {frozenset(map(int, row[1:].nonzero()[0] + 1)) for row in m} == set(enumerate_repairs(inst))


def test_bank_answers(bank):
    # [PAPER] C2 sum, city-matched count, and the SF pair
    ans = lambda sql: oracle_range_answer(parse_query(sql, bank.schema), bank)
    assert ans(C2_SUM).interval == (900, 2200)
    assert ans(CITY_MATCH_COUNT).interval == (1, 2)
    assert ans(SF_SUM).interval == (-100, 0)
    m = ans(SF_MIN)
    assert m.glb == -100 and m.empty_possible


def test_grouped_reports_only_certain_groups(bank):
    # [DERIVED] SF exists only in the two repairs holding f9
    res = oracle_range_answer(parse_query(
        "SELECT ACC.CITY, COUNT(*) FROM ACCOUNTS ACC GROUP BY ACC.CITY", bank.schema), bank)
    assert set(res) == {("LA",), ("SJ",)}
    assert minimal_violations(bank)
