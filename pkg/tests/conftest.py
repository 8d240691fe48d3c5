from importlib import resources
from pathlib import Path

import pytest

ACCEPTANCE_RESULTS: list[str] = []


@pytest.fixture(scope="session")
def demo_dir() -> Path:
    return Path(str(resources.files("maps.data").joinpath("scenarios", "fire_demo")))


@pytest.fixture
def forged(tmp_path):
    from maps.forge import generate_scenario

    def make(seed=42, n_users=20, **kwargs):
        return generate_scenario(tmp_path / f"s{seed}_{n_users}", seed, n_users, **kwargs)

    return make


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
