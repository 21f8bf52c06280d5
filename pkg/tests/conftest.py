import numpy as np
import pytest

from rpol import harness
from rpol.verify import check_penalty

# every trace produced anywhere in the suite passes through here
PENALTY_LOG = {"traces": 0, "violations": []}


def _penalty_hook(trace):
    if trace.meta.get("variant") == "primal-dual":
        return
    PENALTY_LOG["traces"] += 1
    res = check_penalty(trace.Q, trace.q_final)
    if not res.passed:
        PENALTY_LOG["violations"].append((dict(trace.meta), res.detail))
    assert res.passed, res.detail


harness.TRACE_HOOKS.append(_penalty_hook)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance results, printed once at the end of the session
ACCEPTANCE: dict = {}


def record(number: int, passed: bool, detail: str):
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE and not PENALTY_LOG["traces"]:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    n, bad = PENALTY_LOG["traces"], PENALTY_LOG["violations"]
    if ACCEPTANCE:
        ACCEPTANCE[3] = (not bad and n > 0,
                         f"{n} RPOL traces checked suite-wide, {len(bad)} with a penalty violation")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        tr.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")
