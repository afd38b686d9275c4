from __future__ import annotations

from pathlib import Path

import pytest

from cqasat.data_io import load_instance
from cqasat.engine import GroupedRangeAnswers, RangeAnswer

FIXTURES = Path(__file__).parent / "fixtures"
BANK = FIXTURES / "bank"
GOLDEN = Path(__file__).parent / "golden"

# queries over the bank fixture; CUSTOMER is f1..f5, ACCOUNTS f6..f10, CUSTACC f11..f14
C2_SUM = ("SELECT SUM(ACCOUNTS.BAL) FROM ACCOUNTS, CUSTACC "
             "WHERE ACCOUNTS.ACCID = CUSTACC.ACCID AND CUSTACC.CID = 'C2'")
C2_MAX = ("SELECT MAX(ACCOUNTS.BAL) FROM ACCOUNTS, CUSTACC "
             "WHERE ACCOUNTS.ACCID = CUSTACC.ACCID AND CUSTACC.CID = 'C2'")
CITY_MATCH_COUNT = ("SELECT COUNT(*) FROM CUSTOMER CUST, ACCOUNTS ACC, CUSTACC "
             "WHERE CUST.CID = CUSTACC.CID AND ACC.ACCID = CUSTACC.ACCID AND CUST.CITY = ACC.CITY")
MARY_SUM = ("SELECT SUM(ACC.BAL) FROM CUSTOMER CUST, ACCOUNTS ACC, CUSTACC "
           "WHERE CUST.CID = CUSTACC.CID AND ACC.ACCID = CUSTACC.ACCID AND CUST.CNAME = 'Mary'")
TYPE_DISTINCT = "SELECT COUNT(DISTINCT ACC.TYPE) FROM ACCOUNTS ACC"
SF_SUM = "SELECT SUM(ACCOUNTS.BAL) FROM ACCOUNTS WHERE ACCOUNTS.CITY = 'SF'"
SF_MIN = "SELECT MIN(ACCOUNTS.BAL) FROM ACCOUNTS WHERE ACCOUNTS.CITY = 'SF'"
CITY_COUNT = ("SELECT CUST.CITY, COUNT(*) FROM CUSTOMER CUST, CUSTACC "
              "WHERE CUST.CID = CUSTACC.CID GROUP BY CUST.CITY")


@pytest.fixture(scope="session")
def bank():
    return load_instance(BANK / "schema.txt", BANK)


def normalize(result):
    """Comparable form of a scalar or grouped result: intervals plus the empty flag."""
    if isinstance(result, RangeAnswer):
        return (result.interval, result.empty_possible)
    if isinstance(result, GroupedRangeAnswers):
        return {a.group_key: (a.interval, a.empty_possible) for a in result}
    return {k: (a.interval, a.empty_possible) for k, a in result.items()}


# acceptance criterion number -> passed, filled in by test_acceptance.py
ACCEPTANCE: dict[int, bool] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"ACCEPTANCE {n}: {'PASS' if ACCEPTANCE[n] else 'FAIL'}")
