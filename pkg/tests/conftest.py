import numpy as np
import pytest

from fasdepth import tensor as T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=range(20), ids=lambda s: f"seed{s}")
def seed20(request):
    """Twenty seeds for finite-difference sweeps."""
    return request.param


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


def fd_check(fn, x, h=1e-6):
    """Relative error between tape and central-difference gradients of fn at x."""
    with T.GradTape() as tape:
        xt = T.Tensor(x)
        tape.watch(xt)
        out = fn(xt)
    analytic = T.backward(tape, out)[xt]
    numeric = T.numerical_grad(lambda v: fn(T.Tensor(v)).item(), x, h)
    return T.relative_error(analytic, numeric)
