import numpy as np
import pytest

from tenerv.tensor import Tensor


def numeric_grad(f, arrays, h=1e-5):
    """Central finite differences of scalar ``f(*arrays)`` w.r.t. every array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = f(*arrays)
            a[i] = old - h
            fm = f(*arrays)
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def rel_error(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def check_gradients(build, arrays, tol=1e-4, h=1e-5, seed=0):
    """Compare autodiff gradients of ``sum(w * build(*tensors))`` with finite differences.

    A fixed random projection ``w`` makes every output element contribute.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    probe = build(*[Tensor(a) for a in arrays]).data
    w = np.random.default_rng(seed).uniform(-1, 1, probe.shape)

    def scalar(*arrs):
        return float(np.sum(w * build(*[Tensor(a) for a in arrs]).data))

    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    (out * Tensor(w)).sum().backward()
    expected = numeric_grad(scalar, arrays, h)
    errs = [rel_error(t.grad, e) for t, e in zip(tensors, expected)]
    assert max(errs) <= tol, errs
    return errs


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(name: str, ok: bool, detail: str) -> None:
    """Print and remember one pass/fail line for the acceptance summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
