"""Acceptance suite: every criterion at its pinned tolerance and path count.

Criteria 1-11 run once at 10^5 paths through the same functions ``jumplq verify``
uses.  Criterion 12 runs the CLI verify command twice and compares the report bytes.
A one-line pass/fail summary per criterion is printed at the end of the session.
"""
from __future__ import annotations

import pytest

from jumplq.cli import main
from jumplq.verify import CriterionResult, core_criteria

N_PATHS = 100_000
SEED = 2024

RESULTS: dict[int, CriterionResult] = {}


@pytest.fixture(scope="module")
def core():
    results = {r.number: r for r in core_criteria(N_PATHS, SEED)}
    RESULTS.update(results)
    return results


@pytest.mark.slow
@pytest.mark.parametrize("number", range(1, 12))
def test_criterion(core, number):
    res = core[number]
    assert res.passed, res.line()


@pytest.mark.slow
def test_criterion_12_reproducibility(tmp_path, capsys):
    reports = []
    for run in ("first", "second"):
        out = tmp_path / run
        code = main(["verify", "--paths", "2000", "--seed", str(SEED), "--out", str(out)])
        capsys.readouterr()
        reports.append((code, (out / "verify_report.txt").read_bytes()))
    same = reports[0][1] == reports[1][1]
    RESULTS[12] = CriterionResult(12, "reproducibility (CLI verify twice)", same,
                                  [("paths", 2000), ("identical", "yes" if same else "no")])
    # exit codes may differ from 0 at this reduced path count; only identity is pinned
    assert reports[0][0] == reports[1][0]
    assert same
