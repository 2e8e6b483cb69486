"""The eleven acceptance criteria, each with its runtime budget in seconds.

Every criterion prints one PASS/FAIL line; the lines are repeated in the
terminal summary so they are visible without -s.
"""

import time

import pytest

from isopyc.config import RunConfig
from isopyc.suites import CRITERIA

BUDGET = {1: 10, 2: 20, 3: 5, 4: 10, 5: 60, 6: 60, 7: 120, 8: 600, 9: 30, 10: 60, 11: 30}

TITLE = {
    1: "elliptic manufactured solution",
    2: "variable-coefficient elliptic robustness",
    3: "hydrostatic identity",
    4: "Alinhac commutation identity",
    5: "internal-wave dispersion",
    6: "equilibrium fixed point",
    7: "divergence-free propagation",
    8: "energy growth-rate trend",
    9: "Eulerian bridge round trip",
    10: "energy equivalence bracket",
    11: "blow-up detection",
}

SUMMARY = []


@pytest.mark.acceptance
@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n):
    cfg = RunConfig.from_dict()
    start = time.perf_counter()
    checks = CRITERIA[n](cfg)
    elapsed = time.perf_counter() - start
    failed = [c for c in checks if not c.passed]
    in_time = elapsed < BUDGET[n]
    ok = not failed and in_time
    line = (f"criterion {n:>2} {TITLE[n]:<42} {'PASS' if ok else 'FAIL'}  "
            f"{len(checks) - len(failed)}/{len(checks)} checks, {elapsed:.1f} s of {BUDGET[n]} s")
    print(line)
    for c in checks:
        print("    " + c.row())
    SUMMARY.append(line)
    assert not failed, "\n".join(c.row() for c in failed)
    assert in_time, f"runtime {elapsed:.1f} s exceeds {BUDGET[n]} s"
