"""Shared fixtures and the acceptance-summary hook.

The acceptance tests (tests/test_acceptance.py) each carry a criterion
label in their docstring; after the session a one-line PASS/FAIL verdict
per criterion is printed so the run log shows the full checklist."""

import numpy as np
import pytest

from hestonrb.config import RunConfig
from hestonrb.pipeline import assemble_problem

TINY_CFG = """
[mesh]
nx = 24
ny = 12

[time]
k_steps = 8

[training]
rho_count = 5
n1_max = 20
"""


@pytest.fixture(scope="session")
def tiny_config() -> RunConfig:
    return RunConfig.from_text(TINY_CFG)


@pytest.fixture(scope="session")
def tiny_problem(tiny_config):
    """Small assembled problem (J = 253) shared by fast tests."""
    return assemble_problem(tiny_config)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


# --- acceptance checklist reporting ---------------------------------------

_acceptance_results = {}
_acceptance_labels = {}


def pytest_collection_modifyitems(items):
    for item in items:
        if "test_acceptance.py" in str(item.fspath):
            doc = (item.function.__doc__ or "").strip().splitlines()
            label = doc[0] if doc else item.name
            _acceptance_labels[item.nodeid] = label


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    if report.nodeid in _acceptance_labels:
        _acceptance_results[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_labels:
        return
    tw = terminalreporter
    tw.section("acceptance checklist")
    for nodeid, label in sorted(_acceptance_labels.items(), key=lambda kv: kv[1]):
        outcome = _acceptance_results.get(nodeid, "not run")
        verdict = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(
            outcome, outcome.upper()
        )
        tw.write_line(f"{verdict:4s}  {label}")
