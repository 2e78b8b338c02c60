import numpy as np
import pytest

GRAVITY = np.array([0.0, 0.0, -9.81])


def imu_signals(traj):
    """Noise-free body rate and specific force functions of a truth trajectory."""
    def omega(t):
        return traj(t).omega

    def acc(t):
        s = traj(t)
        return np.einsum("nji,nj->ni", s.R, s.a - GRAVITY)

    return omega, acc


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def record(criterion: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
