import numpy as np
import pytest

from keat import autodiff as ad


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def fd_check(build_loss, params, step=1e-5):
    """Max relative error between tape gradients and central differences.

    ``build_loss()`` recomputes the scalar loss from the current ``params``.
    """
    with ad.Tape() as tape:
        loss = build_loss()
    grads = tape.backward(loss)
    worst = 0.0
    for p in params:
        saved = p.data.copy()

        def f(x, p=p):
            p.data = x
            return build_loss()

        num = ad.finite_diff_grad(f, saved, step)
        p.data = saved
        worst = max(worst, rel_err(grads.get(p, np.zeros_like(saved)), num))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one pass/fail line per acceptance criterion, collected by tests/test_acceptance.py
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, title, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
