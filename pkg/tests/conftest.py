import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cknockoff.linear_model import ProblemInstance, standardize_columns

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_instance(seed, n=60, m=10, alpha=0.2, k=0, amp=3.0):
    rng = np.random.default_rng(seed)
    X, _ = standardize_columns(rng.standard_normal((n, m)))
    beta = np.zeros(m)
    beta[:k] = amp
    y = X @ beta + rng.standard_normal(n)
    return ProblemInstance(X, y, alpha)


@pytest.fixture
def small_instance():
    return random_instance(1, n=60, m=10, k=3, amp=4.0)


# acceptance criteria report: one line per criterion, printed after the run
ACCEPTANCE = {}


def record_criterion(number, title, passed, detail):
    ACCEPTANCE[number] = (title, bool(passed), detail)
    print(f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    import json
    import pathlib

    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[k]
        tr.write_line(f"criterion {k:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    out = pathlib.Path(__file__).resolve().parent.parent / "acceptance_results.json"
    out.write_text(json.dumps({str(k): {"title": t, "pass": ok, "detail": d}
                               for k, (t, ok, d) in sorted(ACCEPTANCE.items())}, indent=2))
