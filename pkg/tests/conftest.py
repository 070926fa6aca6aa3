import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sipose import autodiff as ad

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def grad_check(fn, *inputs, eps=1e-5):
    """Max relative error between tape gradients and central differences, over all inputs."""
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    ts = [ad.Tensor(x, requires_grad=True) for x in inputs]
    out = fn(*ts)
    ad.backward(out)
    worst = 0.0
    for i, x in enumerate(inputs):
        def f(xi, i=i):
            args = [ad.Tensor(v) for v in inputs]
            args[i] = ad.Tensor(xi)
            with ad.no_grad():
                return fn(*args).item()
        num = ad.numeric_grad(f, x, eps)
        g = ts[i].grad if ts[i].grad is not None else np.zeros_like(x)
        worst = max(worst, rel_err(g, num))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    lines = getattr(acc, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
