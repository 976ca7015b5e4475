import numpy as np
import pytest

from vcsflow.signals import INPUT_CHANNELS, Recording
from vcsflow.synthgen import GeneratorConfig, generate_recording


def make_recording(n=50, fs=10.0, flow=True, seed=0, id="rec"):
    rng = np.random.default_rng(seed)
    channels = {name: rng.normal(size=n) for name in INPUT_CHANNELS}
    if flow:
        channels["mdot"] = rng.normal(size=n)
    return Recording(fs, channels, 0.0, id)


@pytest.fixture
def recording():
    return make_recording()


@pytest.fixture(scope="session")
def synthetic():
    """A 3000 s synthetic recording with its annotations."""
    return generate_recording(GeneratorConfig(duration_s=3000.0, seed=11), id="syn")


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record a PASS/FAIL line for an acceptance criterion; call with ``(number, title)``."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])
    criterion = {}

    def register(number, title):
        criterion.update(number=number, title=title)

    yield register
    failed = getattr(request.node, "rep_call", None) is None or request.node.rep_call.failed
    status = "FAIL" if failed else "PASS"
    line = f"{status}: criterion {criterion.get('number', '?')} - {criterion.get('title', request.node.name)}"
    lines.append(line)
    print(f"\n{line}")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(" ")[0])):
            terminalreporter.write_line(line)
