import pytest
from hypothesis import HealthCheck, settings

from coofdma.mac import Topology

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def fig1_topo():
    """Two mutually hidden APs; each STA hears both APs."""
    return Topology.build(
        {"AP1": 1, "AP2": 1},
        {"STA1": ("AP1", 1), "STA2": ("AP2", 2)},
        links=[("AP1", "STA1"), ("AP2", "STA2"), ("AP1", "STA2"), ("AP2", "STA1")],
    )


_ACCEPT = pytest.StashKey[dict]()


@pytest.fixture
def accept(request):
    """Record one acceptance verdict; a test that dies before recording counts as FAIL."""
    store = request.config.stash.setdefault(_ACCEPT, {})
    key = request.node.name
    lines = []

    def record(number: int, title: str, passed: bool, detail: str):
        lines.append((number, f"criterion {number} {'PASS' if passed else 'FAIL'} {title}: {detail}"))

    yield record
    if not lines:
        lines.append((99, f"{key} FAIL: no verdict recorded"))
    for n, line in lines:
        store.setdefault(n, []).append(line)


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_ACCEPT, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(store):
        for line in store[n]:
            terminalreporter.write_line(line)
