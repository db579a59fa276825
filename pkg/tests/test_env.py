import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from oatpulse.env import (
    IllegalActionError,
    PhysicsConfig,
    PulseSequence,
    Scheme,
    assign_rewards,
    final_qfi,
    normalized_rewards,
    run_episode,
)
from oatpulse.metrology import optimal_squeezing_time, qfi_generator_z
from oatpulse.spin import Action, Axis, apply_oat, css_initial, dense_generator


def test_assign_rewards_examples():
    assert assign_rewards([1, 3, 2, 5, 4]) == [5, 5, 5, 5, 4]
    assert assign_rewards([2.5] * 4) == [2.5] * 4
    with pytest.raises(ValueError):
        assign_rewards([])


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=60))
@settings(max_examples=1000, deadline=None)
def test_rewards_non_increasing_suffix_max(series):
    r = assign_rewards(series)
    assert all(a >= b for a, b in zip(r, r[1:]))
    assert r[-1] == series[-1]
    assert r == [max(series[t:]) for t in range(len(series))]


def test_normalized_rewards():
    n = 40
    assert normalized_rewards([n], n)[0] == pytest.approx(1 / n)
    assert normalized_rewards([n * n * 0.98], n)[0] == pytest.approx(0.98)
    r = np.array([3.0, 2.0, 1.0])
    assert np.allclose(normalized_rewards(r * n * n, n), r)


def test_free_evolution_matches_direct_propagation():
    cfg = PhysicsConfig(30, total_time=0.2, n_intervals=10)
    trace = run_episode(cfg, [0] * 10)
    direct = apply_oat(css_initial(30), cfg.chi * cfg.total_time)
    assert np.allclose(trace.final_state.amplitudes, direct.amplitudes, atol=1e-12)
    # J_z commutes with twisting, so the QFI never moves off N
    assert np.allclose(trace.qfi_series, 30, rtol=1e-9)
    assert qfi_generator_z(direct) == pytest.approx(trace.final_qfi, rel=1e-12)


def test_fifty_step_episode_shape():
    cfg = PhysicsConfig(100, total_time=0.13, chi=1.0, n_intervals=50)
    rng = np.random.default_rng(0)
    trace = run_episode(cfg, lambda obs, t: int(rng.integers(2)))
    assert len(trace.actions) == 50 and len(trace.observations) == 50
    assert len(trace.qfi_series) == 51 and len(trace.rewards) == 51
    assert trace.qfi_series[0] == pytest.approx(100, abs=1e-9)
    assert all(a >= b for a, b in zip(trace.rewards, trace.rewards[1:]))


def test_replay_is_deterministic():
    cfg = PhysicsConfig(60, n_intervals=20, scheme=Scheme.BOTH_XY)
    rng = np.random.default_rng(4)
    first = run_episode(cfg, lambda obs, t: int(rng.integers(3)))
    again = run_episode(cfg, first.actions)
    assert np.max(np.abs(np.subtract(first.qfi_series, again.qfi_series))) <= 1e-12
    assert final_qfi(cfg, first.actions) == pytest.approx(first.final_qfi, abs=1e-12)


def test_single_interval_pulse_direct_composition():
    n, t = 6, 0.31
    cfg = PhysicsConfig(n, total_time=t, n_intervals=1)
    trace = run_episode(cfg, [Action.PULSE_X])
    jx, jz = dense_generator(n, Axis.X), dense_generator(n, Axis.Z)
    expected = expm(-1j * np.pi / 2 * jx) @ expm(-1j * cfg.chi * t * jz @ jz) @ css_initial(n).amplitudes
    assert np.allclose(trace.final_state.amplitudes, expected, atol=1e-12)


def test_only_x_rejects_y_pulses():
    cfg = PhysicsConfig(10, n_intervals=3, scheme="only-x")
    with pytest.raises(IllegalActionError):
        run_episode(cfg, [0, 2, 0])
    with pytest.raises(IllegalActionError):
        run_episode(PhysicsConfig(10, n_intervals=1, scheme="both-xy"), [5])


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_only_x_traces_never_contain_y(seed):
    cfg = PhysicsConfig(12, total_time=0.3, n_intervals=8)
    rng = np.random.default_rng(seed)
    trace = run_episode(cfg, lambda obs, t: int(rng.integers(cfg.scheme.n_actions)))
    assert Action.PULSE_Y not in trace.actions
    assert trace.qfi_series[0] == pytest.approx(12, abs=1e-9)


def test_action_list_length_checked():
    with pytest.raises(ValueError):
        run_episode(PhysicsConfig(5, total_time=0.1, n_intervals=4), [0, 0])


def test_default_total_time_is_squeezing_optimum():
    cfg = PhysicsConfig(80)
    assert cfg.total_time == pytest.approx(optimal_squeezing_time(80))
    assert cfg.chi == 1.0 and cfg.n_intervals == 50
    assert cfg.dt == pytest.approx(cfg.total_time / 50)


def test_observe_time_flag():
    cfg = PhysicsConfig(8, total_time=0.1, n_intervals=4, observe_time=True)
    trace = run_episode(cfg, [0, 0, 0, 0])
    assert trace.observations[2].shape == (7,) and trace.observations[2][-1] == pytest.approx(0.5)


def test_sequence_json_roundtrip(tmp_path):
    cfg = PhysicsConfig(20, total_time=0.15, n_intervals=6, scheme=Scheme.BOTH_XY)
    seq = PulseSequence.from_config(cfg, [0, 1, 2, 0, 0, 1])
    path = tmp_path / "seq.json"
    seq.save(path)
    d = json.loads(path.read_text())
    assert d == {"format_version": 1, "n_atoms": 20, "chi": 1.0, "total_time": 0.15,
                 "n_intervals": 6, "scheme": "both-xy", "actions": [0, 1, 2, 0, 0, 1]}
    back = PulseSequence.load(path)
    assert back == seq
    assert back.n_pulses() == 3 and back.n_pulses(Action.PULSE_Y) == 1


def test_sequence_file_validation():
    good = {"format_version": 1, "n_atoms": 4, "chi": 1.0, "total_time": 0.1,
            "n_intervals": 2, "scheme": "only-x", "actions": [0, 1]}
    PulseSequence.from_json(json.dumps(good))
    for patch in ({"format_version": 99}, {"actions": [0, 2]}, {"actions": [0]}):
        with pytest.raises(ValueError):
            PulseSequence.from_json(json.dumps({**good, **patch}))
