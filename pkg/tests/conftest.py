import pytest

from tremorkit.features import build_dataset, synthetic_corpus

_ACCEPTANCE_RESULTS = []


@pytest.fixture(scope="session")
def pilot_corpus_segments():
    """The 80-segment synthetic pilot corpus (20 per task), built once."""
    return synthetic_corpus(n_per_class=20, seed=0)


@pytest.fixture(scope="session")
def pilot_dataset(pilot_corpus_segments):
    return build_dataset(pilot_corpus_segments, mode="stft")


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    _ACCEPTANCE_RESULTS.append((name, report.outcome))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS:
        mark = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"ACCEPTANCE {mark}: {name}")
