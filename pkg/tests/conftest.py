import pytest
from hypothesis import settings

from maskup import bench, masterkey, tagger

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


@pytest.fixture(scope="session")
def small_corpus():
    return bench.generate_corpus(11, 240)


@pytest.fixture(scope="session")
def small_model(small_corpus):
    return tagger.train(small_corpus, tagger.TrainConfig(epochs=4, seed=3))


@pytest.fixture(scope="session")
def authority():
    return masterkey.authority_keygen(seed=2024)


@pytest.fixture(scope="session")
def other_authority():
    return masterkey.authority_keygen(seed=99)


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    for key, value in report.user_properties:
        if key == "acceptance":
            ACCEPTANCE_RESULTS.append(("PASS" if report.passed else "FAIL", value))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for status, line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{status}] {line}")
