"""End-to-end acceptance gate.

``jqlab selftest`` runs twice in fresh processes with the same master seed.
Criteria 1-11 are read from the first run's summary; criterion 12 compares
the CSV bytes of both runs. One pass/fail line per criterion is printed in
the terminal summary.
"""

import subprocess
import sys
import time
from pathlib import Path

import pytest

from jqlab.acceptance import BUDGETS
from jqlab.io import read_csv

from .conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.acceptance

SEED = 0
TOTAL_BUDGET = 25 * 60


def _selftest(out: Path) -> tuple[subprocess.CompletedProcess, float]:
    t0 = time.perf_counter()
    res = subprocess.run(
        [sys.executable, "-m", "jqlab", "selftest", "--seed", str(SEED), "--out", str(out)],
        capture_output=True, text=True,
    )
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("selftest")
    a, ta = _selftest(base / "A")
    b, tb = _selftest(base / "B")
    sys.stdout.write(a.stdout)
    _, rows = read_csv(base / "A" / "summary.csv")
    timings = dict(
        (int(n), float(s)) for n, s in (line.split() for line in (base / "A" / "timings.txt").read_text().splitlines())
    )
    return {"dirs": (base / "A", base / "B"), "procs": (a, b), "wall": ta + tb, "summary": rows, "timings": timings}


def _line(n, name, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.mark.parametrize("n", range(1, 12))
def test_criterion(runs, n):
    row = next((r for r in runs["summary"] if int(r["criterion"]) == n), None)
    assert row is not None, f"criterion {n} missing from the summary"
    ok = row["passed"] == "1"
    secs = runs["timings"][n]
    in_time = secs <= BUDGETS[n]
    _line(n, row["name"], ok and in_time, f"value={row['value']} ({row['threshold']}); {secs:.1f}s of {BUDGETS[n]}s")
    assert ok, f"criterion {n} failed: value={row['value']} threshold={row['threshold']}"
    assert in_time, f"criterion {n} took {secs:.1f}s, budget {BUDGETS[n]}s"


def test_criterion_12_determinism(runs):
    a, b = runs["dirs"]
    pa = {p.relative_to(a) for p in a.rglob("*.csv")}
    pb = {p.relative_to(b) for p in b.rglob("*.csv")}
    differing = sorted(str(p) for p in pa & pb if (a / p).read_bytes() != (b / p).read_bytes())
    ok = pa == pb and len(pa) >= 12 and not differing and all(p.returncode == 0 for p in runs["procs"])
    _line(12, "byte-identical selftest CSVs", ok and runs["wall"] < TOTAL_BUDGET,
          f"{len(pa)} files, {len(differing)} differ; two runs took {runs['wall']:.0f}s")
    assert pa == pb
    assert len(pa) >= 12
    assert not differing, differing
    assert runs["wall"] < TOTAL_BUDGET


def test_selftest_exit_code(runs):
    for proc in runs["procs"]:
        assert proc.returncode == 0, proc.stdout + proc.stderr
