import numpy as np
import pytest

from polfuse import polarimetry as pol


def random_c3(rng: np.random.Generator, shape=(), rank: int = 3, scale: float = 1.0) -> np.ndarray:
    """Packed Hermitian PSD values built as averages of random outer products."""
    a = rng.normal(size=shape + (3, rank)) + 1j * rng.normal(size=shape + (3, rank))
    m = scale * (a @ np.conj(np.swapaxes(a, -1, -2))) / rank
    return pol.c3_pack(m)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")
    config._acceptance = {}


def pytest_runtest_logreport(report):
    if report.when not in ("setup", "call") or (report.when == "setup" and report.passed):
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    store = _CONFIG[0]._acceptance if _CONFIG else None
    if store is None:
        return
    store[props["criterion"]] = (props["title"], report.passed, props.get("detail", ""))


_CONFIG = []


@pytest.fixture(autouse=True)
def _acceptance_props(request):
    m = request.node.get_closest_marker("acceptance")
    if m is not None:
        request.node.user_properties.append(("criterion", m.args[0]))
        request.node.user_properties.append(("title", m.args[1]))
    yield


def pytest_sessionstart(session):
    _CONFIG.append(session.config)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = getattr(config, "_acceptance", {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(store):
        title, ok, detail = store[num]
        line = f"criterion {num}: {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
