import numpy as np
import pytest

from infswap.model import franz_potential, make_grid, tabulated_potential
from infswap.swapchain import ProductChain


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def two_state_chain():
    """Two temperatures on a two-point grid with energies (0, 1)."""
    grid = make_grid(0.0, 1.0, 2)
    return ProductChain(grid, tabulated_potential(grid, [0.0, 1.0]), (0.1, 0.5))


@pytest.fixture
def franz_small():
    grid = make_grid(-1.5, 1.5, 6)
    return ProductChain(grid, franz_potential(grid, 0.9), (0.2, 0.5))


@pytest.fixture
def franz_k3():
    grid = make_grid(-1.5, 1.5, 4)
    return ProductChain(grid, franz_potential(grid, 0.9), (0.2, 0.4, 0.8))


ACCEPTANCE = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.fixture
def detail(request):
    """Attach a one-line measurement summary to the current criterion."""

    def note(text):
        request.node.criterion_detail = text

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and (rep.when == "call" or (rep.when == "setup" and rep.failed)):
        text = getattr(item, "criterion_detail", "")
        ACCEPTANCE.append((marker.args[0], rep.passed, text))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, text in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({text})" if text else ""))
