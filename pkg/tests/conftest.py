import time

import pytest

from ddrs import aimd
from ddrs.behavior import TABLE1

AIMD_SEEDS = range(10)


@pytest.fixture(scope="session")
def aimd_runs():
    """Ten default-configuration AIMD runs on the reference curves, with wall times."""
    out = {}
    for seed in AIMD_SEEDS:
        t0 = time.perf_counter()
        res = aimd.run(TABLE1, aimd.AimdConfig(record_every=1000), seed)
        out[seed] = (res, time.perf_counter() - t0)
    return out


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion, whatever the capture mode."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", None) != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                lines.append((props["criterion"], outcome, props.get("detail", "")))
    if not lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, outcome, detail in sorted(lines):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {detail}")
