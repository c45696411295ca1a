import hypothesis
import pytest

from devmatch.datamodel import ingest, load_truth, propagate_same_handle_ips
from devmatch.synthgen import WorldConfig, generate

hypothesis.settings.register_profile("default", deadline=None, max_examples=50)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=5)
hypothesis.settings.load_profile("default")

SMALL_WORLD = WorldConfig(n_persons=300, seed=7)


@pytest.fixture(scope="session")
def small_world(tmp_path_factory):
    d = tmp_path_factory.mktemp("small_world")
    generate(SMALL_WORLD, d)
    return d


@pytest.fixture(scope="session")
def small_catalog(small_world):
    return propagate_same_handle_ips(ingest(small_world))


@pytest.fixture(scope="session")
def small_truth(small_world):
    return load_truth(small_world / "truth.csv")


ACCEPTANCE: list[str] = []


def record(name: str, ok: bool, detail: str = "") -> bool:
    """Log one acceptance criterion; the lines are printed in the terminal summary."""
    ACCEPTANCE.append(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
