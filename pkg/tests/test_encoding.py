from __future__ import annotations

import random
from itertools import permutations, product

import pytest
from hypothesis import given, settings, strategies as st

from cqasat.data_io import random_key_instance
from cqasat.encoding import (
    Clause,
    EncodingError,
    WcnfFormula,
    encode_count_sum,
    encode_denial,
    encode_distinct,
    encode_key_hard,
    encode_min_iteration_base,
    minsat_transform,
)
from cqasat.engine import encode_query
from cqasat.evaluation import Witness, WitnessBag, minimal_violations
from cqasat.oracle import enumerate_repairs
from cqasat.query import parse_query
from cqasat.relational import key_equal_groups

from conftest import CITY_MATCH_COUNT, MARY_SUM, TYPE_DISTINCT

# clause lists as printed in the worked clause sets; aux variables are named by strings
ALPHA = [(1,), (2, 3), (4,), (5,), (6,), (7,), (8, 9), (10,), (-2, -3), (-8, -9)]
COUNT_CLAUSES = (ALPHA, [((-1, -6), 1), ((-2, -7), 1), ((-3, -9), 1)])
SUM_CLAUSES = (ALPHA + [(-2, -9, "y1"), ("-y1", 2), ("-y1", 9), (-3, -9, "y2"), ("-y2", 3), ("-y2", 9)],
       [((-2, -7), 1000), ((-3, -7), 1000), ((-2, -8), 1200), ((-3, -8), 1200), (("y1",), 100), (("y2",), 100)])
DISTINCT_CLAUSES = ([(6,), (7,), (8, 9), (10,), (-8, -9),
        (6, 7, "v1"), ("-v1", -6), ("-v1", -7),
        (8, 9, 10, "v2"), ("-v2", -8), ("-v2", -9), ("-v2", -10)],
       [(("v1",), 1), (("v2",), 1)])


def _canon(hard, soft, aux_map):
    def lit(l):
        if isinstance(l, str):
            return -aux_map[l[1:]] if l.startswith("-") else aux_map[l]
        return l
    h = sorted(tuple(sorted(lit(l) for l in c)) for c in hard)
    s = sorted((tuple(sorted(lit(l) for l in c)), w) for c, w in soft)
    return h, s


def same_up_to_renaming(formula: WcnfFormula, expected, n_facts: int) -> bool:
    """Compare clause multisets, trying every bijection of named aux variables
    onto the formula's auxiliary variables."""
    names = sorted({l.lstrip("-") for c in expected[0] + [c for c, _ in expected[1]] for l in c if isinstance(l, str)})
    aux = list(range(n_facts + 1, formula.num_vars + 1))
    used = {abs(l) for c in formula.hard + [c for c, _ in formula.soft] for l in c}
    aux = [v for v in aux if v in used]
    if len(aux) != len(names):
        return False
    got = _canon(formula.hard, formula.soft, {})
    return any(_canon(*expected, dict(zip(names, perm))) == got for perm in permutations(aux))


def _formula(bank, sql):
    return encode_query(parse_query(sql, bank.schema), bank)[0][1]


def test_city_match_count_golden(bank):
    # [PAPER] alpha, alpha^mn and three unit-weight beta clauses
    assert same_up_to_renaming(_formula(bank, CITY_MATCH_COUNT), COUNT_CLAUSES, len(bank))


def test_mary_sum_golden(bank):
    # [PAPER] same hard clauses, six betas, six gamma clauses, offset 4400
    f = _formula(bank, MARY_SUM)
    assert same_up_to_renaming(f, SUM_CLAUSES, len(bank))
    assert sorted(w for _, w in f.soft) == [100, 100, 1000, 1000, 1200, 1200]
    gammas = [c for c in f.hard if any(abs(l) > len(bank) for l in c)]
    assert len(gammas) == 6


def test_mary_sum_offset(bank):
    # [PAPER] Q(I_p) = 4400
    from cqasat.evaluation import witness_bag
    from cqasat.query import derive_witness_query
    q = parse_query(MARY_SUM, bank.schema)
    bag = witness_bag(derive_witness_query(q), bank, 0, 0, elide=["CUSTACC"])
    art = encode_count_sum(bag, "SUM", WcnfFormula(len(bank)))
    assert art.offset == 4400 and art.fixed == 0


def test_type_distinct_golden(bank):
    # [PAPER] single-fact witnesses need no z variables
    assert same_up_to_renaming(_formula(bank, TYPE_DISTINCT), DISTINCT_CLAUSES, len(bank))


def test_key_hard_layout():
    # [TRIVIAL] at-least-one clauses first, then pairwise at-most-one
    from cqasat.relational import KeyEqualGroup
    groups = [KeyEqualGroup("R", (1,), (1, 2, 3)), KeyEqualGroup("R", (2,), (4,))]
    assert encode_key_hard(groups) == [(1, 2, 3), (4,), (-1, -2), (-1, -3), (-2, -3)]
    assert encode_min_iteration_base(groups).hard == [(1, 2, 3), (4,)]


@pytest.mark.parametrize("lits,weight", [((), None), ((1, 0), None), ((1, 1), None), ((1, -1), None), ((1,), 0)])
def test_clause_validation(lits, weight):
    # [TRIVIAL]
    with pytest.raises(EncodingError):
        Clause(lits, weight)


def test_formula_top_and_vars():
    # [TRIVIAL]
    f = WcnfFormula()
    f.add_hard((1, -3))
    f.add_soft((2,), 5)
    assert f.num_vars == 3 and f.top == 6 and f.num_clauses == 2
    with pytest.raises(EncodingError):
        f.add_soft((1,), 0)


def _sat_weight(formula, assign):
    return sum(w for c, w in formula.soft if any(assign[abs(l)] == (l > 0) for l in c))


def _hard_ok(formula, assign):
    return all(any(assign[abs(l)] == (l > 0) for l in c) for c in formula.hard)


def _all_assignments(n):
    for bits in product((False, True), repeat=n):
        yield dict(zip(range(1, n + 1), bits))


@st.composite
def weighted_formula(draw, max_vars=8):
    n = draw(st.integers(1, max_vars))
    lit = st.integers(1, n).flatmap(lambda v: st.sampled_from((v, -v)))
    clause = st.lists(lit, min_size=1, max_size=3, unique_by=abs)
    f = WcnfFormula(n)
    for c in draw(st.lists(clause, max_size=4)):
        f.add_hard(c)
    for c in draw(st.lists(clause, min_size=1, max_size=6)):
        f.add_soft(c, draw(st.integers(1, 9)))
    return f


@settings(max_examples=120, deadline=None)
@given(weighted_formula())
def test_minsat_transform_pointwise(f):
    # [DERIVED] for every assignment: satisfied(original) = K - satisfied(transformed)
    g, k = minsat_transform(f)
    for a in _all_assignments(f.num_vars):
        assert _sat_weight(f, a) == k - _sat_weight(g, a)


def _project_value(art, formula, n_facts, hard_ok_models):
    out = {}
    for a in hard_ok_models:
        key = frozenset(i for i in range(1, n_facts + 1) if a[i])
        out.setdefault(key, set()).add(art.value(_sat_weight(formula, a)))
    return out


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("op", ["COUNT_STAR", "SUM", "DISTINCT_SUM", "DISTINCT_COUNT"])
def test_value_identity(seed, op):
    # [DERIVED] on every model of the hard clauses, fixed + offset - satisfied = the aggregate over the repair
    rng = random.Random(seed)
    inst = random_key_instance(rng, max_groups=3, max_facts=8)
    n = len(inst)
    ws = []
    for _ in range(rng.randint(1, 5)):
        facts = frozenset(rng.sample(range(1, n + 1), rng.randint(1, min(3, n))))
        ws.append(Witness(facts, rng.randint(1, 2), rng.randint(-3, 3)))
    bag = WitnessBag(ws)
    f = WcnfFormula(n)
    for c in encode_key_hard(key_equal_groups(inst)):
        f.add_hard(c)
    if op.startswith("DISTINCT"):
        art = encode_distinct(bag, op.split("_")[1], f)
    else:
        art = encode_count_sum(bag, op, f)
    models = [a for a in _all_assignments(f.num_vars) if _hard_ok(f, a)]
    for repair, values in _project_value(art, f, n, models).items():
        present = [w for w in ws if w.fact_ids <= repair]
        if op == "COUNT_STAR":
            want = sum(w.multiplicity for w in present)
        elif op == "SUM":
            want = sum(w.multiplicity * w.value for w in present)
        elif op == "DISTINCT_SUM":
            want = sum({w.value for w in present})
        else:
            want = len({w.value for w in present})
        # gamma/z/v variables are functionally determined, so every extension gives the same value
        assert values == {want}


@pytest.mark.parametrize("seed", range(10))
def test_denial_models_are_repairs(seed):
    # [DERIVED] projected models of the hard side are exactly the enumerated repairs
    from cqasat.data_io import random_dc_instance
    inst = random_dc_instance(random.Random(seed), max_facts=9)
    n = len(inst)
    f = WcnfFormula(n)
    encode_denial(minimal_violations(inst), range(1, n + 1), f)
    models = {frozenset(i for i in range(1, n + 1) if a[i]) for a in _all_assignments(f.num_vars) if _hard_ok(f, a)}
    assert models == set(enumerate_repairs(inst))
