"""End-to-end acceptance criteria at full size.

Each row is printed as ``criterion k: STATUS name (statistic vs tolerance)``
and repeated in the terminal summary.
"""

import subprocess
import sys

import pytest

from stopou import acceptance

REPORT = []


def _report(rows):
    for r in rows:
        line = f"criterion {r.criterion}: {r.status()} {r.name} (statistic {r.statistic:.4g}, tolerance {r.tolerance:.4g})"
        REPORT.append(line)
        print(line)
    return rows


def _run(key):
    return _report(acceptance.CRITERIA[key](quick=False, workers=1))


@pytest.mark.parametrize("key", ["1", "2", "3", "4", "5", "6", "7", "8", "10", "11"])
def test_criterion(key):
    rows = _run(key)
    failed = [r for r in rows if not r.passed]
    assert not failed, "; ".join(f"{r.name}: {r.detail}" for r in failed)


@pytest.fixture(scope="module")
def gradient_rows():
    return {r.name.split(":")[0].split(",")[0]: r for r in _run("9")}


def test_criterion_9_variant_rule(gradient_rows):
    row = gradient_rows["variant table"]
    assert row.passed, row.detail
    assert row.detail == "passing: cm_weighted/minus"


@pytest.mark.xfail(strict=True, reason="the weighted shell term with a plus sign disagrees with the "
                                       "finite-difference oracle; the minus sign is the adjudicated default")
def test_criterion_9_literal_variant(gradient_rows):
    row = gradient_rows["main gradient formula"]
    assert row.expected_failure
    assert row.passed, row.detail


def test_criterion_12_threads_reproducible(tmp_path):
    csvs = []
    for threads in ("1", "4"):
        out = tmp_path / f"t{threads}"
        proc = subprocess.run([sys.executable, "-m", "stopou", "validate", "--quick", "--threads", threads,
                               "--out", str(out)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        csvs.append((out / "validate.csv").read_bytes())
    same = csvs[0] == csvs[1]
    REPORT.append(f"criterion 12: {'PASS' if same else 'FAIL'} validate.csv byte-identical for --threads 1 and 4")
    assert same
