import sys

import numpy as np
import pytest

from case2.model import study_from_arrays


@pytest.fixture
def toy():
    # three sets of size 3, narrow case treated in each, one treated unit per set
    return study_from_arrays([[1, 0, 0]] * 3)


def random_study(rng, I, J, homogeneous=False):
    """Random study; every set has at least one treated unit."""
    rows = []
    z_common = int(rng.integers(1, J + 1))
    for _ in range(I):
        z = z_common if homogeneous else int(rng.integers(1, J + 1))
        vec = np.zeros(J, dtype=int)
        vec[rng.choice(J, z, replace=False)] = 1
        rows.append(vec.tolist())
    return study_from_arrays(rows)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        r = results[number]
        status = "PASS" if r["ok"] else "FAIL"
        elapsed = r.get("elapsed", float("nan"))
        terminalreporter.write_line(
            f"[{status}] {number:2d}. {r['title']} ({elapsed:.3f}s / {r['limit']:g}s) {r['detail']}")
