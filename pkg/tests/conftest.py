import numpy as np
import pytest

_ACCEPTANCE_LINES = []


def diagonal_data(seed, n=100, margin=0.1):
    """Points in the unit square, label 1 iff x0 + x1 > 1, kept off the band."""
    rng = np.random.default_rng(seed)
    pts = []
    while len(pts) < n:
        p = rng.uniform(0.0, 1.0, 2)
        if abs(p.sum() - 1.0) >= margin:
            pts.append(p)
    X = np.array(pts)
    return X, (X.sum(axis=1) > 1.0).astype(float)


def xor_corners(seed, per_corner=25, jitter=0.02):
    """Parity labels on jittered corners of the unit square.

    Every corner reuses the same jitter offsets, so each axis threshold cuts
    both labels equally and no axis-aligned split reduces impurity.
    """
    rng = np.random.default_rng(seed)
    offsets = rng.uniform(-jitter, jitter, (per_corner, 2))
    X, y = [], []
    for a in (0, 1):
        for b in (0, 1):
            pts = np.array([a, b], dtype=float) + offsets
            X.append(np.clip(pts, 0.0, 1.0))
            y += [a ^ b] * per_corner
    return np.vstack(X), np.array(y, dtype=float)


def parity_data(seed, n=600):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 2, (n, 6)).astype(float)
    y = (X[:, 0].astype(int) ^ X[:, 1].astype(int)).astype(float)
    return X, y


@pytest.fixture
def record_criterion():
    def record(name, passed, detail=""):
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        line = f"[{status}] {name}" + (f": {detail}" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
