import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oatpulse.a3c import (
    AdamState,
    MlpParameters,
    ParameterStore,
    TrainerConfig,
    TrainingDivergence,
    adam_step,
    episode_gradients,
    episode_losses,
    greedy_rollout,
    init_mlp,
    load_checkpoint,
    n_mlp_params,
    policy_value,
    save_checkpoint,
    train,
)
from oatpulse.env import PhysicsConfig, Scheme, final_qfi, run_episode


def small_nets(seed, obs_dim=6, n_actions=2, hidden=(8, 8)):
    rng = np.random.default_rng(seed)
    actor = init_mlp((obs_dim, *hidden, n_actions), rng, out_scale=1.0)
    critic = init_mlp((obs_dim, *hidden, 1), rng)
    actor.flat += 0.1 * rng.normal(size=actor.flat.size)
    critic.flat += 0.1 * rng.normal(size=critic.flat.size)
    return actor, critic


def sampled_trace(actor, critic, physics, seed):
    rng = np.random.default_rng(seed)

    def policy(obs, t):
        p, _ = policy_value(actor, critic, obs)
        return int(rng.choice(len(p), p=p))
    return run_episode(physics, policy)


def finite_difference(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences(seed):
    physics = PhysicsConfig(10, total_time=0.25, n_intervals=5,
                            scheme=Scheme.ONLY_X if seed % 2 else Scheme.BOTH_XY)
    actor, critic = small_nets(seed, n_actions=physics.scheme.n_actions)
    trace = sampled_trace(actor, critic, physics, seed)
    beta = 0.05
    g = episode_gradients(actor, critic, trace, physics.n_atoms, beta, grad_clip=None)
    fd_actor = finite_difference(lambda: episode_losses(actor, critic, trace, 10, beta)[0], actor.flat)
    fd_critic = finite_difference(lambda: episode_losses(actor, critic, trace, 10, beta)[1], critic.flat)
    assert np.linalg.norm(g.actor - fd_actor) <= 1e-4 * np.linalg.norm(fd_actor)
    assert np.linalg.norm(g.critic - fd_critic) <= 1e-4 * np.linalg.norm(fd_critic)


def test_zero_advantage_zero_entropy_gives_zero_actor_gradient():
    physics = PhysicsConfig(10, total_time=0.25, n_intervals=5)
    actor, critic = small_nets(0)
    trace = sampled_trace(actor, critic, physics, 0)
    # constant targets plus a constant critic equal to them -> zero advantage everywhere
    trace.rewards = [7.0] * len(trace.rewards)
    critic.layers()[-1][0][...] = 0.0
    critic.layers()[-1][1][...] = 7.0 / 100
    g = episode_gradients(actor, critic, trace, 10, entropy_coef=0.0, grad_clip=None)
    assert np.all(g.actor == 0)
    assert np.allclose(g.critic, 0, atol=1e-15)


def test_uniform_policy_and_zero_value_from_zero_weights():
    actor = MlpParameters((6, 16, 16, 3), np.zeros(n_mlp_params((6, 16, 16, 3))))
    critic = MlpParameters((6, 16, 16, 1), np.zeros(n_mlp_params((6, 16, 16, 1))))
    probs, v = policy_value(actor, critic, np.arange(6.0))
    assert np.allclose(probs, 1 / 3) and v == 0.0


def test_only_x_policy_width():
    physics = PhysicsConfig(10, total_time=0.1, n_intervals=3, scheme="only-x")
    result = train(physics, TrainerConfig(hidden=(4,), episodes=2, workers=1))
    probs, _ = policy_value(result.actor, result.critic, np.zeros(6))
    assert probs.shape == (2,)


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 1e4))
@settings(max_examples=1000, deadline=None)
def test_softmax_normalised_and_positive(seed, scale):
    rng = np.random.default_rng(seed)
    actor = init_mlp((6, 8, 3), rng)
    actor.flat[:] = scale * rng.normal(size=actor.flat.size)
    critic = init_mlp((6, 8, 1), rng)
    probs, v = policy_value(actor, critic, rng.uniform(-1, 1, 6))
    assert abs(probs.sum() - 1) <= 1e-12
    assert np.all(probs > 0)
    assert np.isfinite(v)


def test_non_finite_output_raises():
    actor, critic = small_nets(1)
    critic.flat[:] = np.nan
    with pytest.raises(TrainingDivergence):
        policy_value(actor, critic, np.zeros(6))


def test_adam_zero_gradient_is_noop():
    p = np.array([1.0, -2.0, 3.0])
    state = AdamState.zeros_like(p, learning_rate=0.1)
    adam_step(p, np.zeros(3), state)
    assert np.array_equal(p, [1.0, -2.0, 3.0])
    assert np.all(state.first_moment == 0) and np.all(state.second_moment == 0)
    assert state.step_count == 1


def test_adam_first_step_moves_by_learning_rate():
    p = np.zeros(4)
    g = np.array([3.0, -0.02, 1e3, -7.0])
    state = AdamState.zeros_like(p, learning_rate=0.01)
    adam_step(p, g, state)
    assert np.allclose(p, -0.01 * np.sign(g), rtol=1e-6)


def test_adam_decreases_quadratic():
    p = np.array([2.0, -1.0])
    state = AdamState.zeros_like(p, learning_rate=0.05)
    loss = lambda x: float(x @ x)  # noqa: E731
    start = loss(p)
    adam_step(p, 2 * p, state)
    adam_step(p, 2 * p, state)
    assert loss(p) < start


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(np.zeros(3), np.zeros(2), AdamState.zeros_like(np.zeros(3)))


def test_greedy_rollout_tie_break_and_length():
    physics = PhysicsConfig(12, total_time=0.2, n_intervals=9, scheme="both-xy")
    actor = MlpParameters((6, 4, 3), np.zeros(n_mlp_params((6, 4, 3))))
    seq, trace = greedy_rollout(actor, physics)
    assert seq.actions == [0] * 9
    assert final_qfi(physics, seq.actions) == trace.final_qfi
    rng = np.random.default_rng(0)
    actor = init_mlp((6, 4, 3), rng, out_scale=5.0)
    seq, trace = greedy_rollout(actor, physics)
    assert len(seq.actions) == 9
    assert run_episode(physics, seq.actions).qfi_series == trace.qfi_series


def test_single_worker_training_is_bit_reproducible():
    physics = PhysicsConfig(10, total_time=0.25, n_intervals=6)
    cfg = TrainerConfig(hidden=(16, 16), episodes=40, workers=1, seed=123, actor_lr=1e-2)
    a, b = train(physics, cfg), train(physics, cfg)
    la, lb = a.log.to_dict(), b.log.to_dict()
    la.pop("wall_clock"), lb.pop("wall_clock")
    assert la == lb
    assert np.array_equal(a.store.actor.flat, b.store.actor.flat)
    assert a.best_sequence == b.best_sequence


def test_training_log_shape_and_best_monotone():
    physics = PhysicsConfig(10, total_time=0.25, n_intervals=6, scheme="both-xy")
    result = train(physics, TrainerConfig(hidden=(8,), episodes=60, workers=3, seed=1))
    lg = result.log
    assert len(lg.episode_qfi) == len(lg.best_so_far) == 60
    assert all(a <= b for a, b in zip(lg.best_so_far, lg.best_so_far[1:]))
    assert result.best_qfi >= max(lg.episode_qfi)
    assert result.store.version == 60
    assert final_qfi(physics, result.best_sequence.actions) == pytest.approx(result.best_qfi, abs=1e-12)


def test_divergence_reports_episode_seed():
    physics = PhysicsConfig(10, total_time=0.25, n_intervals=4)
    rng = np.random.default_rng(0)
    actor = init_mlp((6, 4, 2), rng)
    critic = init_mlp((6, 4, 1), rng)
    critic.flat[:] = np.inf
    store = ParameterStore(actor, critic, 1e-3, 1e-3)
    with pytest.raises(TrainingDivergence) as info:
        train(physics, TrainerConfig(hidden=(4,), episodes=3, workers=1), store=store)
    assert info.value.episode_seed is not None


def test_parameter_store_snapshots_are_consistent_under_contention():
    # every update adds the same constant to all entries, so a torn read would show
    # a mix of values inside one snapshot
    sizes = (6, 32, 3)
    actor = MlpParameters(sizes, np.zeros(n_mlp_params(sizes)))
    critic = MlpParameters((6, 32, 1), np.zeros(n_mlp_params((6, 32, 1))))
    store = ParameterStore(actor, critic, 1e-2, 1e-2)
    errors = []

    def writer():
        for _ in range(300):
            store.apply(np.ones_like(actor.flat), np.ones_like(critic.flat))

    def reader():
        for _ in range(300):
            a, c, version = store.snapshot()
            if np.ptp(a.flat) != 0 or np.ptp(c.flat) != 0:
                errors.append(version)

    threads = [threading.Thread(target=writer) for _ in range(4)] + [threading.Thread(target=reader) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert store.version == 1200
    before = store.checksum()
    assert store.checksum() == before


def test_checkpoint_roundtrip(tmp_path):
    physics = PhysicsConfig(10, total_time=0.25, n_intervals=4, scheme="both-xy")
    result = train(physics, TrainerConfig(hidden=(8, 8), episodes=5, workers=1))
    path = tmp_path / "ckpt.npz"
    save_checkpoint(path, result.store, physics.scheme)
    store, scheme = load_checkpoint(path)
    assert scheme is Scheme.BOTH_XY
    assert store.actor.sizes == (6, 8, 8, 3) and store.critic.sizes == (6, 8, 8, 1)
    assert np.array_equal(store.actor.flat, result.store.actor.flat)
    assert np.array_equal(store.critic_adam.second_moment, result.store.critic_adam.second_moment)
    assert store.actor_adam.step_count == 5
    assert store.checksum() == result.store.checksum()
