import numpy as np
import pytest

from crossview.dataset import GenSpec, SplitSpec, generate, split


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_spec():
    return GenSpec(M=6, V=2, samples_per_identity_per_view=3, latent_dim=3, D=8, seed=11)


@pytest.fixture(scope="session")
def small_data(small_spec):
    return generate(small_spec)


@pytest.fixture(scope="session")
def small_split(small_data):
    return split(small_data, SplitSpec(seed=5))


# ---- acceptance summary: one line per criterion ----

_criteria = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria[name] = (report.outcome, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda n: int(n.split("_")[2])):
        outcome, secs = _criteria[name]
        label = name[len("test_criterion_"):].replace("_", " ", 1)
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {label:<40} {verdict}  ({secs:.1f}s)")
