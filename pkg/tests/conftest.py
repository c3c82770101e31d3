import numpy as np
import pytest

from fieldinfill.benchmarks import problem_p1


@pytest.fixture(scope="session")
def p1():
    return problem_p1()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def p1_se_campaign():
    """Seeded P1 campaign with SE_GP infill, PODI field surrogate, 30 + 30 samples.

    The holdout block starts after Sobol point 60, so the test set is the one
    a pure-DoE design of up to 60 points is scored on. Shared by the campaign
    tests and the acceptance suite; returns the final state and its wall time
    in seconds.
    """
    import time

    from fieldinfill.campaign import CampaignConfig, run_campaign

    t0 = time.perf_counter()
    state = run_campaign(CampaignConfig(holdout_skip=60))
    return state, time.perf_counter() - t0


# -- acceptance reporting ----------------------------------------------------
#
# Tests marked ``@pytest.mark.criterion(n)`` are aggregated into one line per
# criterion at the end of the run. ``request.node.user_properties`` entries
# named "detail" are appended to the line.

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or rep.failed or rep.skipped:
        n = marker.args[0]
        entry = _CRITERIA.setdefault(n, {"ok": True, "details": [], "seen": set()})
        if item.nodeid in entry["seen"] and rep.when != "teardown":
            return
        entry["seen"].add(item.nodeid)
        entry["ok"] &= rep.passed
        entry["details"] += [str(v) for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        line = f"criterion {n:2d}: {'PASS' if e['ok'] else 'FAIL'}"
        if e["details"]:
            line += "  (" + "; ".join(e["details"]) + ")"
        terminalreporter.write_line(line)
