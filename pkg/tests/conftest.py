import pytest

from pfaffkit import fixture_path, load_document

FIXTURES = ("toda", "timedep_extended", "waterbag", "poisson_r3", "lcs", "contact")


@pytest.fixture(scope="session")
def docs():
    return {name: load_document(fixture_path(name)) for name in
            FIXTURES + ("toda_corrupted", "free_r4_control")}


@pytest.fixture(autouse=True)
def _no_env_seed(monkeypatch):
    monkeypatch.delenv("PFAFF_SEED", raising=False)


ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def acceptance_log(request):
    """Collects one verdict line per acceptance criterion."""
    return request.config.stash[ACCEPTANCE]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
