import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import flagship_dict
from crosslight.attack import ReplayAttackState, difference_condition
from crosslight.config import from_dict
from crosslight.harness import run_scenario

unit = st.floats(0.0, 1.0, allow_nan=False)


def test_running_minimum_example():
    a = ReplayAttackState()
    for o in (0.5, 0.3, 0.4):
        a.record(o)
    assert a.ras == 0.3


def test_first_observation_always_recorded():
    assert ReplayAttackState().record(1.0).ras == 1.0


def test_increasing_sequence_keeps_first():
    a = ReplayAttackState()
    for o in np.linspace(0.1, 0.9, 50):
        a.record(float(o))
    assert a.ras == 0.1


def test_passthrough_before_start():
    a = ReplayAttackState(start_time=420.0).record(0.2)
    assert a.inject(0.6, 419.0) == 0.6 and not a.active


def test_injects_minimum_when_active():
    a = ReplayAttackState(start_time=420.0).record(0.2)
    assert a.inject(0.6, 420.0) == 0.2 and a.active
    # controller sees a non-positive change against any previous sample >= ras
    assert a.ras - 0.6 <= 0


def test_noop_at_minimum():
    a = ReplayAttackState(start_time=0.0).record(0.25)
    assert a.process(0.25, 5.0) == 0.25


def test_running_minimum_random_sequences():
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(100_000):
        n = int(rng.integers(1, 12))
        seq = rng.random(n)
        a = ReplayAttackState()
        prev_ras = math.inf
        for o in seq:
            a.record(float(o))
            assert a.ras <= prev_ras
            prev_ras = a.ras
        mismatches += a.ras != seq.min()
    assert mismatches == 0


def test_difference_condition_matches_simple_form():
    rng = np.random.default_rng(7)
    o_t, o_prev, ras = rng.random((3, 100_000))
    # include exact ties, where rounding in the difference form matters most
    o_t[::97] = ras[::97]
    disagree = sum(
        difference_condition(a, b, c) != (a < c) for a, b, c in zip(o_t.tolist(), o_prev.tolist(), ras.tolist())
    )
    assert disagree == 0


@given(st.lists(unit, min_size=1, max_size=60), st.floats(0, 60))
def test_replay_never_fabricates(seq, start):
    a = ReplayAttackState(start_time=start)
    seen = set()
    for t, o in enumerate(seq):
        seen.add(o)
        out = a.process(o, float(t))
        assert out in seen
        assert a.active == (t >= start)


@settings(max_examples=200)
@given(st.lists(unit, min_size=1, max_size=200))
def test_ras_is_prefix_minimum(seq):
    a = ReplayAttackState()
    for i, o in enumerate(seq):
        a.record(o)
        assert a.ras == min(seq[: i + 1])


def test_disabled_equals_never_starting():
    off = from_dict(flagship_dict(attack={"enabled": False}))
    late = from_dict(flagship_dict(attack={"enabled": True, "start_time_s": 1e12}))
    assert run_scenario(off).trace.equals(run_scenario(late).trace)


def test_attacked_green_non_increasing_to_min_green():
    cfg = from_dict(flagship_dict(arrival_mode="deterministic"))
    tr = run_scenario(cfg).trace
    rows = tr.boundary_rows()
    z = tr["z1"][rows]
    t = tr["t"][rows]
    after = z[t > cfg.attack.start_time_s]
    assert np.all(np.diff(after) <= 1e-12)
    assert after[-1] == pytest.approx(cfg.min_green_s)


def test_injected_values_come_from_history(flagship):
    tr = run_scenario(flagship).trace
    meas, rep = tr["o_meas1"], tr["o_rep1"]
    for i in np.flatnonzero(tr["attack_active"] > 0)[::50]:
        assert rep[i] in set(meas[: i + 1].tolist())
