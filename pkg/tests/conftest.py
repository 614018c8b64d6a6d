import numpy as np
import pytest

from tumorpinn.net import NetworkParams, init_xavier


def linear_net(w_t=0.0, w_x=0.0, w_y=0.0, bias=0.0) -> NetworkParams:
    """Single affine layer: u = |w_t t + w_x x + w_y y + bias|."""
    return NetworkParams((3, 1), [(np.array([[w_t, w_x, w_y]]), np.array([bias]))])


def constant_net(c: float) -> NetworkParams:
    return linear_net(bias=c)


def random_small_net(seed: int, arch=(3, 6, 5, 1), bias_scale=0.3) -> NetworkParams:
    rng = np.random.default_rng(seed)
    net = init_xavier(arch, seed)
    return NetworkParams(arch, [(W, bias_scale * rng.standard_normal(b.shape)) for W, b in net.layers])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
