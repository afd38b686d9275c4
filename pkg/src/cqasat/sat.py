"""WCNF serialization, an internal SAT/MaxSAT solver pair, and an external solver driver."""
from __future__ import annotations

import os
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Sequence

from .encoding import WcnfFormula

DEFAULT_SOLVER_ENV = "CQASAT_SOLVER"


class SolverError(RuntimeError):
    pass


class Status(str, Enum):
    OPTIMUM = "OPTIMUM"
    SAT = "SAT"
    UNSAT = "UNSAT"
    UNKNOWN = "UNKNOWN"


@dataclass
class SolverResult:
    status: Status
    model: dict[int, bool] | None = None
    cost: int | None = None  # falsified soft weight
    total_soft_weight: int = 0
    transcript: str = ""
    seconds: float = 0.0

    @property
    def satisfied_weight(self) -> int | None:
        return None if self.cost is None else self.total_soft_weight - self.cost

    @property
    def found(self) -> bool:
        return self.status in (Status.OPTIMUM, Status.SAT)


@dataclass(frozen=True)
class SolverConfig:
    backend: str = "internal"  # "internal" or "external"
    path: str | None = None
    args: tuple[str, ...] = ()
    time_limit: float = 3600.0
    seed: int = 0
    wcnf_format: str = "classic"

    def __post_init__(self):
        if self.backend not in ("internal", "external"):
            raise ValueError(f"unknown solver backend {self.backend!r}")
        if self.time_limit <= 0:
            raise ValueError("time limit must be positive")
        if self.wcnf_format not in ("classic", "new"):
            raise ValueError("wcnf format must be 'classic' or 'new'")

    @classmethod
    def external(cls, path: str | None = None, args: Sequence[str] = (), **kw) -> "SolverConfig":
        path = path or os.environ.get(DEFAULT_SOLVER_ENV)
        if not path:
            raise SolverError(f"no external solver given and ${DEFAULT_SOLVER_ENV} is unset")
        return cls(backend="external", path=path, args=tuple(args), **kw)


# -- DIMACS -------------------------------------------------------------------

def write_wcnf(formula: WcnfFormula, sink: IO[str], fmt: str = "classic", top: int | None = None) -> None:
    if fmt == "classic":
        top = formula.top if top is None else top
        if top <= formula.total_soft_weight and formula.soft:
            raise ValueError("top weight must exceed the sum of soft weights")
        sink.write(f"p wcnf {formula.num_vars} {formula.num_clauses} {top}\n")
        for c in formula.hard:
            sink.write(f"{top} {' '.join(map(str, c))} 0\n")
        for c, w in formula.soft:
            sink.write(f"{w} {' '.join(map(str, c))} 0\n")
    elif fmt == "new":
        for c in formula.hard:
            sink.write(f"h {' '.join(map(str, c))} 0\n")
        for c, w in formula.soft:
            sink.write(f"{w} {' '.join(map(str, c))} 0\n")
    else:
        raise ValueError(f"unknown WCNF format {fmt!r}")


def wcnf_text(formula: WcnfFormula, fmt: str = "classic") -> str:
    import io

    buf = io.StringIO()
    write_wcnf(formula, buf, fmt)
    return buf.getvalue()


def read_wcnf(text: str) -> WcnfFormula:
    """Parse classic (``p wcnf``/``p cnf``) or ``h``-prefixed WCNF."""
    formula = WcnfFormula()
    top = None
    plain_cnf = False
    declared_vars = 0
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("c"):
            continue
        parts = s.split()
        if parts[0] == "p":
            if len(parts) >= 4 and parts[1] == "wcnf":
                declared_vars = int(parts[2])
                top = int(parts[4]) if len(parts) > 4 else None
            elif len(parts) == 4 and parts[1] == "cnf":
                declared_vars = int(parts[2])
                plain_cnf = True
            else:
                raise ValueError(f"line {lineno}: malformed header")
            continue
        if parts[-1] != "0":
            raise ValueError(f"line {lineno}: clause not terminated by 0")
        if parts[0] == "h":
            formula.add_hard(int(x) for x in parts[1:-1])
            continue
        nums = [int(x) for x in parts[:-1]]
        if plain_cnf:
            formula.add_hard(nums)
            continue
        w, lits = nums[0], nums[1:]
        if top is not None and w >= top:
            formula.add_hard(lits)
        else:
            formula.add_soft(lits, w)
    formula.num_vars = max(formula.num_vars, declared_vars)
    return formula


def parse_solver_output(text: str, num_vars: int | None = None) -> SolverResult:
    status = None
    cost = None
    v_tokens: list[str] = []
    malformed = False
    for line in text.splitlines():
        s = line.strip()
        if not s:
            continue
        tag, _, rest = s.partition(" ")
        rest = rest.strip()
        if tag == "s":
            upper = rest.upper()
            if upper.startswith("OPTIMUM"):
                status = Status.OPTIMUM
            elif upper == "SATISFIABLE":
                status = Status.SAT
            elif upper == "UNSATISFIABLE":
                status = Status.UNSAT
            else:
                status = Status.UNKNOWN
        elif tag == "o":
            try:
                cost = int(rest.split()[0])
            except (ValueError, IndexError):
                malformed = True
        elif tag == "v":
            v_tokens.extend(rest.split())
    model = None
    if v_tokens:
        try:
            model = _parse_model(v_tokens, num_vars)
        except ValueError:
            malformed = True
    if malformed or status is None:
        return SolverResult(Status.UNKNOWN, transcript=text)
    if status is Status.UNSAT:
        return SolverResult(Status.UNSAT, transcript=text)
    return SolverResult(status, model, cost, transcript=text)


def _parse_model(tokens: list[str], num_vars: int | None) -> dict[int, bool]:
    binary = len(tokens) == 1 and set(tokens[0]) <= {"0", "1"} and (
        len(tokens[0]) > 1 or num_vars == 1 or tokens[0] == "1" and num_vars is None)
    if binary and not (tokens[0] == "0" and num_vars != 1):
        return {i: ch == "1" for i, ch in enumerate(tokens[0], 1)}
    model = {}
    for t in tokens:
        lit = int(t)
        if lit == 0:
            continue
        model[abs(lit)] = lit > 0
    return model


def model_cost(formula: WcnfFormula, model: dict[int, bool]) -> int:
    return sum(w for c, w in formula.soft if not any(model.get(abs(l), False) == (l > 0) for l in c))


def satisfies_hard(formula: WcnfFormula, model: dict[int, bool]) -> bool:
    return all(any(model.get(abs(l), False) == (l > 0) for l in c) for c in formula.hard)


# -- internal SAT (DPLL) ------------------------------------------------------

class _Timeout(Exception):
    pass


def _normalize(clause: Iterable[int]) -> tuple[int, ...] | None:
    """Deduplicate literals; None for tautologies."""
    seen: list[int] = []
    for l in clause:
        if -l in seen:
            return None
        if l not in seen:
            seen.append(l)
    return tuple(seen)


def dpll(num_vars: int, clauses: Sequence[Sequence[int]], deadline: float | None = None
         ) -> tuple[Status, dict[int, bool] | None]:
    """Chronological DPLL with two watched literals, branching on the
    lowest-index unassigned variable, false first."""
    cls: list[list[int]] = []
    units: list[int] = []
    for c in clauses:
        n = _normalize(c)
        if n is None:
            continue
        if not n:
            return Status.UNSAT, None
        for l in n:
            num_vars = max(num_vars, abs(l))
        if len(n) == 1:
            units.append(n[0])
        else:
            cls.append(list(n))
    value = [0] * (num_vars + 1)  # 1 true, -1 false, 0 unassigned
    watches: dict[int, list[int]] = {}
    for i, c in enumerate(cls):
        watches.setdefault(c[0], []).append(i)
        watches.setdefault(c[1], []).append(i)
    trail: list[int] = []

    def lit_val(l: int) -> int:
        v = value[l] if l > 0 else -value[-l]
        return v

    def assign(l: int) -> bool:
        cur = lit_val(l)
        if cur == 1:
            return True
        if cur == -1:
            return False
        value[abs(l)] = 1 if l > 0 else -1
        trail.append(l)
        return True

    def propagate(start: int) -> bool:
        q = start
        while q < len(trail):
            falsified = -trail[q]
            q += 1
            wl = watches.get(falsified)
            if not wl:
                continue
            keep = []
            conflict = False
            for idx_pos, ci in enumerate(wl):
                if conflict:
                    keep.append(ci)
                    continue
                c = cls[ci]
                if c[0] == falsified:
                    c[0], c[1] = c[1], c[0]
                other = c[0]
                if lit_val(other) == 1:
                    keep.append(ci)
                    continue
                moved = False
                for k in range(2, len(c)):
                    if lit_val(c[k]) != -1:
                        c[1], c[k] = c[k], c[1]
                        watches.setdefault(c[1], []).append(ci)
                        moved = True
                        break
                if moved:
                    continue
                keep.append(ci)
                if lit_val(other) == -1:
                    conflict = True
                else:
                    assign(other)
            watches[falsified] = keep
            if conflict:
                return False
        return True

    for u in units:
        if not assign(u):
            return Status.UNSAT, None
    if not propagate(0):
        return Status.UNSAT, None

    decisions: list[tuple[int, int, bool]] = []  # (trail length before, var, flipped)
    next_var = 1
    steps = 0
    while True:
        while next_var <= num_vars and value[next_var] != 0:
            next_var += 1
        if next_var > num_vars:
            return Status.SAT, {v: value[v] == 1 for v in range(1, num_vars + 1)}
        steps += 1
        if deadline is not None and steps % 256 == 0 and time.monotonic() > deadline:
            raise _Timeout()
        var = next_var
        decisions.append((len(trail), var, False))
        assign(-var)
        ok = propagate(len(trail) - 1)
        while not ok:
            while decisions:
                pos, dvar, flipped = decisions.pop()
                for l in trail[pos:]:
                    value[abs(l)] = 0
                    if abs(l) < next_var:
                        next_var = abs(l)
                del trail[pos:]
                if not flipped:
                    decisions.append((pos, dvar, True))
                    assign(dvar)
                    ok = propagate(pos)
                    break
            else:
                return Status.UNSAT, None


class SatSolver:
    """Clause store with monotone additions; each ``solve`` runs from scratch."""

    def __init__(self, num_vars: int = 0, clauses: Iterable[Sequence[int]] = (), config: SolverConfig | None = None):
        self.num_vars = num_vars
        self.clauses: list[tuple[int, ...]] = []
        self.config = config or SolverConfig()
        self.calls = 0
        for c in clauses:
            self.add_clause(c)

    def add_clause(self, clause: Iterable[int]) -> None:
        c = tuple(clause)
        for l in c:
            self.num_vars = max(self.num_vars, abs(l))
        self.clauses.append(c)

    def solve(self) -> SolverResult:
        self.calls += 1
        return solve_sat(self.num_vars, self.clauses, self.config)


def solve_sat(num_vars: int, clauses: Sequence[Sequence[int]], config: SolverConfig | None = None) -> SolverResult:
    config = config or SolverConfig()
    start = time.monotonic()
    if config.backend == "external":
        f = WcnfFormula(num_vars)
        for c in clauses:
            n = _normalize(c)
            if n is None:
                continue
            if not n:
                return SolverResult(Status.UNSAT)
            f.add_hard(n)
        res = _run_external(f, config)
        if res.status is Status.OPTIMUM:
            res.status = Status.SAT
        res.seconds = time.monotonic() - start
        return res
    try:
        status, model = dpll(num_vars, clauses, start + config.time_limit)
    except _Timeout:
        return SolverResult(Status.UNKNOWN, seconds=time.monotonic() - start)
    return SolverResult(status, model, 0 if model is not None else None, seconds=time.monotonic() - start)


def count_models(num_vars: int, clauses: Sequence[Sequence[int]], project: Sequence[int] | None = None,
                 limit: int = 1_000_000) -> int:
    """Number of models projected onto ``project`` (all variables by default),
    by repeated solving with blocking clauses."""
    project = list(range(1, num_vars + 1)) if project is None else list(project)
    work = [tuple(c) for c in clauses]
    n = 0
    while n < limit:
        status, model = dpll(num_vars, work)
        if status is Status.UNSAT:
            return n
        n += 1
        if not project:
            return n
        work.append(tuple(-v if model.get(v, False) else v for v in project))
    raise SolverError(f"more than {limit} models")


# -- internal MaxSAT (branch and bound) ----------------------------------------

_Hard = tuple[int, ...]
_Soft = tuple[tuple[int, ...], int]


class _BranchAndBound:
    """Exact minimum-cost search with unit propagation, a unit-pair lower
    bound, and component decomposition at every node (solutions of
    independent components are combined, and solved components are cached)."""

    def __init__(self, deadline: float):
        self.deadline = deadline
        self.nodes = 0
        self.cache: dict = {}

    def tick(self):
        self.nodes += 1
        if self.nodes % 512 == 0 and time.monotonic() > self.deadline:
            raise _Timeout()

    @staticmethod
    def simplify(hard: list[_Hard], soft: list[_Soft], assign: dict[int, bool]):
        """Propagate units from ``assign`` (updated in place).

        Returns (hard, soft, falsified soft weight) or None on a hard conflict.
        """
        while True:
            new_hard = []
            units = []
            for c in hard:
                lits = []
                sat = False
                for l in c:
                    v = assign.get(l if l > 0 else -l)
                    if v is None:
                        lits.append(l)
                    elif v == (l > 0):
                        sat = True
                        break
                if sat:
                    continue
                if not lits:
                    return None
                if len(lits) == 1:
                    units.append(lits[0])
                else:
                    new_hard.append(tuple(lits))
            hard = new_hard
            if not units:
                break
            for u in units:
                prev = assign.get(abs(u))
                if prev is None:
                    assign[abs(u)] = u > 0
                elif prev != (u > 0):
                    return None
        cost = 0
        new_soft = []
        for c, w in soft:
            lits = []
            sat = False
            for l in c:
                v = assign.get(l if l > 0 else -l)
                if v is None:
                    lits.append(l)
                elif v == (l > 0):
                    sat = True
                    break
            if sat:
                continue
            if not lits:
                cost += w
            else:
                new_soft.append((tuple(lits), w))
        return hard, new_soft, cost

    @staticmethod
    def components(hard: list[_Hard], soft: list[_Soft]) -> list[tuple[list[_Hard], list[_Soft]]]:
        parent: dict[int, int] = {}

        def find(x):
            parent.setdefault(x, x)
            root = x
            while parent[root] != root:
                root = parent[root]
            while parent[x] != root:
                parent[x], x = root, parent[x]
            return root

        for c in hard:
            r = find(abs(c[0]))
            for l in c[1:]:
                s = find(abs(l))
                if s != r:
                    parent[s] = r
        for c, _ in soft:
            r = find(abs(c[0]))
            for l in c[1:]:
                s = find(abs(l))
                if s != r:
                    parent[s] = r
        groups: dict[int, tuple[list, list]] = {}
        for c in hard:
            groups.setdefault(find(abs(c[0])), ([], []))[0].append(c)
        for cw in soft:
            groups.setdefault(find(abs(cw[0][0])), ([], []))[1].append(cw)
        return sorted(groups.values(), key=lambda g: len(g[0]) + len(g[1]))

    @staticmethod
    def unit_pair_bound(soft: list[_Soft]) -> int:
        pos: dict[int, int] = {}
        neg: dict[int, int] = {}
        for c, w in soft:
            if len(c) == 1:
                l = c[0]
                if l > 0:
                    pos[l] = pos.get(l, 0) + w
                else:
                    neg[-l] = neg.get(-l, 0) + w
        return sum(min(w, neg[v]) for v, w in pos.items() if v in neg)

    def split_solve(self, hard, soft, budget: int):
        """Optimal (cost, assignment) with cost < budget, else None."""
        if not hard and not soft:
            return 0, {}
        total = 0
        model: dict[int, bool] = {}
        for h, s in self.components(hard, soft):
            res = self.component(h, s, budget - total)
            if res is None:
                return None
            total += res[0]
            model.update(res[1])
        return total, model

    def component(self, hard: list[_Hard], soft: list[_Soft], budget: int):
        if budget <= 0:
            return None
        key = (tuple(sorted(hard)), tuple(sorted(soft)))
        hit = self.cache.get(key)
        if hit is not None:
            exact, val, model = hit
            if exact:
                return (val, model) if val < budget else None
            if val >= budget:
                return None
        self.tick()
        if self.unit_pair_bound(soft) >= budget:
            self._store(key, False, budget, None)
            return None
        score: dict[int, float] = {}
        gain: dict[int, int] = {}
        for c in hard:
            for l in c:
                score[abs(l)] = score.get(abs(l), 0) + 1
        for c, w in soft:
            for l in c:
                score[abs(l)] = score.get(abs(l), 0) + 1 + w / (1 + len(c))
                gain[l] = gain.get(l, 0) + w
        var = min(score, key=lambda v: (-score[v], v))
        first = gain.get(var, 0) >= gain.get(-var, 0)
        best = None
        bound = budget
        for val in (first, not first):
            assign = {var: val}
            simp = self.simplify(hard, soft, assign)
            if simp is None:
                continue
            h2, s2, cost = simp
            if cost >= bound:
                continue
            res = self.split_solve(h2, s2, bound - cost)
            if res is None:
                continue
            bound = cost + res[0]
            assign.update(res[1])
            best = assign
        if best is None:
            self._store(key, False, budget, None)
            return None
        self._store(key, True, bound, best)
        return bound, best

    def _store(self, key, exact, val, model):
        if len(self.cache) > 500_000:
            self.cache.clear()
        self.cache[key] = (exact, val, model)


def _internal_maxsat(formula: WcnfFormula, config: SolverConfig) -> SolverResult:
    start = time.monotonic()
    total = formula.total_soft_weight
    bnb = _BranchAndBound(start + config.time_limit)
    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 20000))
    try:
        hard = []
        for c in formula.hard:
            n = _normalize(c)
            if n is not None:
                hard.append(n)
        soft = []
        for c, w in formula.soft:
            n = _normalize(c)
            if n is None:
                continue
            soft.append((n, w))
        assign: dict[int, bool] = {}
        simp = bnb.simplify(hard, soft, assign)
        if simp is None:
            return SolverResult(Status.UNSAT, total_soft_weight=total, seconds=time.monotonic() - start)
        h, s, cost = simp
        res = bnb.split_solve(h, s, total + 1 - cost)
    except _Timeout:
        return SolverResult(Status.UNKNOWN, total_soft_weight=total, seconds=time.monotonic() - start)
    finally:
        sys.setrecursionlimit(old_limit)
    if res is None:
        return SolverResult(Status.UNSAT, total_soft_weight=total, seconds=time.monotonic() - start)
    assign.update(res[1])
    model = {v: assign.get(v, False) for v in range(1, formula.num_vars + 1)}
    return SolverResult(Status.OPTIMUM, model, cost + res[0], total, seconds=time.monotonic() - start)


# -- external solver ----------------------------------------------------------

def _run_external(formula: WcnfFormula, config: SolverConfig) -> SolverResult:
    if not config.path:
        raise SolverError("external backend needs a solver path")
    fd, name = tempfile.mkstemp(suffix=".wcnf")
    try:
        with os.fdopen(fd, "w") as fh:
            write_wcnf(formula, fh, config.wcnf_format)
        try:
            proc = subprocess.run([config.path, *config.args, name], capture_output=True, text=True,
                                  timeout=config.time_limit)
        except subprocess.TimeoutExpired as e:
            out = e.stdout.decode() if isinstance(e.stdout, bytes) else (e.stdout or "")
            return SolverResult(Status.UNKNOWN, transcript=out, total_soft_weight=formula.total_soft_weight)
        except OSError as e:
            raise SolverError(f"cannot run external solver {config.path!r}: {e}") from None
    finally:
        Path(name).unlink(missing_ok=True)
    res = parse_solver_output(proc.stdout, formula.num_vars)
    res.total_soft_weight = formula.total_soft_weight
    if res.model is not None:
        if not satisfies_hard(formula, res.model):
            return SolverResult(Status.UNKNOWN, transcript=proc.stdout, total_soft_weight=formula.total_soft_weight)
        if res.cost is None:
            res.cost = model_cost(formula, res.model)
    if res.status is Status.OPTIMUM and res.cost is None:
        return SolverResult(Status.UNKNOWN, transcript=proc.stdout, total_soft_weight=formula.total_soft_weight)
    return res


def solve_wpmaxsat(formula: WcnfFormula, config: SolverConfig | None = None) -> SolverResult:
    """Maximize satisfied soft weight subject to the hard clauses."""
    config = config or SolverConfig()
    if config.backend == "external":
        start = time.monotonic()
        res = _run_external(formula, config)
        res.seconds = time.monotonic() - start
        return res
    return _internal_maxsat(formula, config)
