import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dualx import tensor as T  # noqa: E402
from dualx.tensor import Tape, Tensor  # noqa: E402

FD_STEP = 1e-3
FD_RTOL = 1e-4


@pytest.fixture
def f64():
    with T.precision(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel_err(a, n, floor=1e-8):
    """Norm-wise relative error ||a - n|| / max(||a||, ||n||) of one tensor's gradient."""
    a, n = np.asarray(a, dtype=np.float64).ravel(), np.asarray(n, dtype=np.float64).ravel()
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))


def grad_check(build, inputs, h=FD_STEP, max_entries=None, rng=None):
    """Largest per-tensor relative error between tape gradients and central differences.

    ``build(*inputs)`` must return a scalar Tensor; ``inputs`` are float64
    Tensors with ``requires_grad=True``. With ``max_entries`` only a random
    subset of each input's entries is checked.
    """
    with Tape() as tape:
        loss = build(*inputs)
    tape.backward(loss, list(inputs))
    worst = 0.0
    for t in inputs:
        fn = lambda: build(*inputs).item()  # noqa: E731
        idx = None
        if max_entries is not None and t.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(t.size, max_entries, replace=False)
        num = T.numerical_grad(fn, t.data, h=h, index=idx)
        ana = t.grad
        if idx is not None:
            ana, num = ana.reshape(-1)[idx], num.reshape(-1)[idx]
        worst = max(worst, rel_err(ana, num))
    return worst


def leaf(arr):
    return Tensor(np.array(arr, dtype=np.float64), requires_grad=True, dtype=np.float64)


def directional_check(build, inputs, rng, h=FD_STEP):
    """Relative error of the tape's directional derivative along a random unit direction.

    Compares sum_i <grad_i, v_i> with (f(x + h v) - f(x - h v)) / 2h, which
    checks every input entry at once at the cost of two evaluations.
    """
    with Tape() as tape:
        loss = build(*inputs)
    tape.backward(loss, list(inputs))
    dirs = [rng.normal(size=t.shape) for t in inputs]
    norm = np.sqrt(sum(float(np.sum(d * d)) for d in dirs))
    dirs = [d / norm for d in dirs]
    ana = sum(float(np.sum(t.grad * d)) for t, d in zip(inputs, dirs))
    base = [t.data.copy() for t in inputs]

    def shifted(sign):
        for t, b, d in zip(inputs, base, dirs):
            t.data[...] = b + sign * h * d
        try:
            return build(*inputs).item()
        finally:
            for t, b in zip(inputs, base):
                t.data[...] = b

    num = (shifted(1.0) - shifted(-1.0)) / (2 * h)
    return abs(ana - num) / max(abs(ana), abs(num), 1e-8)


# ---------------------------------------------------------------- acceptance reporting

ACCEPTANCE_RESULTS: dict = {}


class criterion:
    """Context manager recording one acceptance criterion's outcome and wall time."""

    def __init__(self, number: int, title: str):
        self.number, self.title, self.notes = number, title, []

    def note(self, text: str) -> None:
        self.notes.append(text)

    def __enter__(self):
        import time

        self._t0 = time.perf_counter()
        return self

    def __exit__(self, kind, exc, tb):
        import time

        elapsed = time.perf_counter() - self._t0
        status = "PASS" if kind is None else "FAIL"
        detail = "; ".join(self.notes)
        if exc is not None:
            detail = (detail + "; " if detail else "") + " ".join(str(exc).split())[:200]
        ACCEPTANCE_RESULTS[self.number] = f"criterion {self.number:>2} {status}  {self.title} ({elapsed:.1f}s) {detail}"
        return False


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
