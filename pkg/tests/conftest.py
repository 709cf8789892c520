import numpy as np
import pytest

from crosslight.config import from_dict
from crosslight.model import ArmState, ControlState, IntersectionState


def flagship_dict(**top):
    pair = lambda I: {"intensity_vph": I, "k": 0.008, "beta": 0.8, "lambda": -0.46, "initial_queue": 70}
    d = {
        "name": "flagship",
        "horizon_s": 1800,
        "dt_s": 1.0,
        "cycle_time_s": 60,
        "f": 0.7,
        "min_green_s": 2.0,
        "arrival_mode": "poisson",
        "seed": 1,
        "pairs": [pair(700), pair(400)],
        "attack": {"enabled": True, "start_time_s": 420, "target_pair": 0},
    }
    d.update(top)
    return d


@pytest.fixture
def flagship():
    return from_dict(flagship_dict())


def make_state(q=(10.0, 10.0), o=(0.3, 0.3), I=(700.0, 400.0), S=(1800.0, 1800.0), delta=(1, 1),
               k=(0.01, 0.01), beta=(0.9, 0.9), lam=(0.02, 0.02), dt=1.0, step=0):
    arms = tuple(
        ArmState(q[i], o[i], I[i], S[i], delta[i], k[i], beta[i], lam[i]) for i in range(2)
    )
    return IntersectionState(arms, step=step, dt=dt)


def make_controls(z=(20.0, 20.0), Tc=60.0, f=0.7, min_green=0.0):
    return ControlState(tuple(z), Tc, f, min_green)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
