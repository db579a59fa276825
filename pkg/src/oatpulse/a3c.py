"""Asynchronous advantage actor-critic with separate numpy MLPs and ADAM.

Workers are threads.  Each holds a local copy of both networks, rolls out episodes in
its own environment, and pushes gradients to a lock-protected global store.
"""
from __future__ import annotations

import logging
import threading
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .env import EpisodeTrace, PhysicsConfig, PulseSequence, Scheme, normalized_rewards, run_episode

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDivergence(FloatingPointError):
    def __init__(self, message: str, episode_seed: int | None = None, dump: dict | None = None):
        super().__init__(message if episode_seed is None else f"{message} (episode seed {episode_seed})")
        self.episode_seed = episode_seed
        self.dump = dump or {}


# ---------------------------------------------------------------------------
# MLP on a flat parameter vector

@dataclass
class MlpParameters:
    sizes: tuple[int, ...]
    flat: np.ndarray

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        expected = n_mlp_params(self.sizes)
        if self.flat.shape != (expected,):
            raise ValueError(f"flat vector has {self.flat.size} entries, layer sizes need {expected}")

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def layers(self, flat: np.ndarray | None = None):
        """(W, b) views into `flat` (default: own parameters); W has shape (fan_in, fan_out)."""
        flat = self.flat if flat is None else flat
        out, i = [], 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = flat[i:i + fan_in * fan_out].reshape(fan_in, fan_out)
            i += fan_in * fan_out
            b = flat[i:i + fan_out]
            i += fan_out
            out.append((w, b))
        return out

    def copy(self) -> "MlpParameters":
        return MlpParameters(self.sizes, self.flat.copy())


def n_mlp_params(sizes) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def init_mlp(sizes, rng: np.random.Generator, out_scale: float = 0.01) -> MlpParameters:
    params = MlpParameters(sizes, np.zeros(n_mlp_params(sizes)))
    layers = params.layers()
    for k, (w, _) in enumerate(layers):
        fan_in, fan_out = w.shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        if k == len(layers) - 1:
            limit *= out_scale
        w[...] = rng.uniform(-limit, limit, size=w.shape)
    return params


def mlp_forward(params: MlpParameters, x: np.ndarray):
    """tanh hidden layers, linear output. Returns (output, activations per layer)."""
    acts = [np.atleast_2d(x)]
    layers = params.layers()
    h = acts[0]
    for k, (w, b) in enumerate(layers):
        h = h @ w + b
        if k < len(layers) - 1:
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def mlp_backward(params: MlpParameters, acts, dout: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(params.flat)
    glayers = params.layers(grad)
    layers = params.layers()
    delta = dout
    for k in range(len(layers) - 1, -1, -1):
        w, _ = layers[k]
        gw, gb = glayers[k]
        gw[...] = acts[k].T @ delta
        gb[...] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ w.T) * (1.0 - acts[k] ** 2)
    return grad


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    # floor keeps every probability strictly positive when logits differ by > ~745
    e = np.maximum(np.exp(z), np.finfo(float).tiny)
    return e / e.sum(axis=-1, keepdims=True)


def policy_value(actor: MlpParameters, critic: MlpParameters, obs: np.ndarray) -> tuple[np.ndarray, float]:
    # non-finite results are reported below, so numpy's own warnings are noise here
    with np.errstate(invalid="ignore", over="ignore"):
        logits, _ = mlp_forward(actor, obs)
        value, _ = mlp_forward(critic, obs)
        probs = softmax(logits[0])
    v = float(value[0, 0])
    if not (np.all(np.isfinite(probs)) and np.isfinite(v)):
        raise TrainingDivergence("non-finite network output",
                                 dump={"obs": np.asarray(obs).tolist(), "logits": logits.tolist(), "value": v})
    return probs, v


def clip_by_global_norm(grad: np.ndarray, max_norm: float | None) -> tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(grad))
    if max_norm is not None and norm > max_norm:
        grad = grad * (max_norm / norm)
    return grad, norm


# ---------------------------------------------------------------------------
# losses and gradients

@dataclass
class EpisodeGradients:
    actor: np.ndarray
    critic: np.ndarray
    actor_loss: float
    critic_loss: float
    actor_norm: float
    critic_norm: float


def _targets(trace: EpisodeTrace, n_atoms: int) -> np.ndarray:
    # one target per decision: normalised r_t for t = 0 .. n_t - 1
    return normalized_rewards(trace.rewards, n_atoms)[: len(trace.actions)]


def episode_losses(actor: MlpParameters, critic: MlpParameters, trace: EpisodeTrace,
                   n_atoms: int, entropy_coef: float) -> tuple[float, float]:
    """Scalar actor and critic losses; the reference for gradient checks."""
    obs = np.asarray(trace.observations)
    acts = np.asarray(trace.actions)
    targets = _targets(trace, n_atoms)
    values = mlp_forward(critic, obs)[0][:, 0]
    logits = mlp_forward(actor, obs)[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(logp)
    entropy = -(p * logp).sum(axis=1)
    adv = targets - values
    actor_loss = float(np.sum(-logp[np.arange(len(acts)), acts] * adv - entropy_coef * entropy))
    critic_loss = float(np.sum((values - targets) ** 2))
    return actor_loss, critic_loss


def episode_gradients(actor: MlpParameters, critic: MlpParameters, trace: EpisodeTrace, n_atoms: int,
                      entropy_coef: float = 0.01, grad_clip: float | None = 1.0) -> EpisodeGradients:
    """Gradients of sum_t[-log pi(a_t|s_t) A_t - beta H_t] and sum_t (V(s_t) - r_t)^2.

    The advantage A_t = r_t - V(s_t) is held constant in the actor loss.
    """
    obs = np.asarray(trace.observations)
    acts = np.asarray(trace.actions)
    targets = _targets(trace, n_atoms)

    values_out, c_acts = mlp_forward(critic, obs)
    values = values_out[:, 0]
    logits, a_acts = mlp_forward(actor, obs)
    p = softmax(logits)
    logp = np.log(p)
    entropy = -(p * logp).sum(axis=1)
    adv = targets - values

    onehot = np.zeros_like(p)
    onehot[np.arange(len(acts)), acts] = 1.0
    # d(-log p_a)/dz = p - onehot ; dH/dz_k = -p_k (log p_k + H)
    dlogits = adv[:, None] * (p - onehot) + entropy_coef * p * (logp + entropy[:, None])
    g_actor = mlp_backward(actor, a_acts, dlogits)
    g_critic = mlp_backward(critic, c_acts, 2.0 * (values - targets)[:, None])

    actor_loss = float(np.sum(-logp[np.arange(len(acts)), acts] * adv - entropy_coef * entropy))
    critic_loss = float(np.sum((values - targets) ** 2))
    g_actor, na = clip_by_global_norm(g_actor, grad_clip)
    g_critic, nc = clip_by_global_norm(g_critic, grad_clip)
    return EpisodeGradients(g_actor, g_critic, actor_loss, critic_loss, na, nc)


# ---------------------------------------------------------------------------
# ADAM

@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params: np.ndarray, **kw) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params), **kw)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> None:
    """In-place bias-corrected ADAM update of `params` and `state`."""
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    state.step_count += 1
    t = state.step_count
    state.first_moment *= state.beta1
    state.first_moment += (1 - state.beta1) * grads
    state.second_moment *= state.beta2
    state.second_moment += (1 - state.beta2) * grads * grads
    m_hat = state.first_moment / (1 - state.beta1 ** t)
    v_hat = state.second_moment / (1 - state.beta2 ** t)
    params -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


# ---------------------------------------------------------------------------
# shared parameter store

class ParameterStore:
    """Global actor/critic parameters with consistent snapshots and serialized updates."""

    def __init__(self, actor: MlpParameters, critic: MlpParameters, actor_lr: float, critic_lr: float):
        self.actor = actor.copy()
        self.critic = critic.copy()
        self.actor_adam = AdamState.zeros_like(actor.flat, learning_rate=actor_lr)
        self.critic_adam = AdamState.zeros_like(critic.flat, learning_rate=critic_lr)
        self._lock = threading.Lock()
        self.version = 0

    def snapshot(self) -> tuple[MlpParameters, MlpParameters, int]:
        with self._lock:
            return self.actor.copy(), self.critic.copy(), self.version

    def apply(self, g_actor: np.ndarray, g_critic: np.ndarray) -> int:
        with self._lock:
            adam_step(self.actor.flat, g_actor, self.actor_adam)
            adam_step(self.critic.flat, g_critic, self.critic_adam)
            self.version += 1
            return self.version

    def checksum(self) -> int:
        with self._lock:
            return zlib.crc32(self.actor.flat.tobytes() + self.critic.flat.tobytes())


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, store: ParameterStore, scheme: Scheme) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = np.array([CHECKPOINT_VERSION, store.actor.n_out, len(store.actor.sizes),
                       len(store.critic.sizes)], dtype=np.int64)
    tmp = path.with_name(f".{path.name}.tmp.npz")
    np.savez(
        tmp,
        header=header,
        scheme=np.array(Scheme(scheme).value),
        actor_sizes=np.array(store.actor.sizes, dtype=np.int64),
        critic_sizes=np.array(store.critic.sizes, dtype=np.int64),
        actor=store.actor.flat,
        critic=store.critic.flat,
        actor_m=store.actor_adam.first_moment,
        actor_v=store.actor_adam.second_moment,
        critic_m=store.critic_adam.first_moment,
        critic_v=store.critic_adam.second_moment,
        adam_meta=np.array([
            store.actor_adam.step_count, store.actor_adam.learning_rate,
            store.critic_adam.step_count, store.critic_adam.learning_rate,
        ], dtype=float),
    )
    tmp.replace(path)


def load_checkpoint(path) -> tuple[ParameterStore, Scheme]:
    with np.load(path) as z:
        version = int(z["header"][0])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        actor = MlpParameters(tuple(z["actor_sizes"]), z["actor"].copy())
        critic = MlpParameters(tuple(z["critic_sizes"]), z["critic"].copy())
        a_step, a_lr, c_step, c_lr = z["adam_meta"]
        store = ParameterStore(actor, critic, float(a_lr), float(c_lr))
        store.actor_adam.first_moment[:] = z["actor_m"]
        store.actor_adam.second_moment[:] = z["actor_v"]
        store.actor_adam.step_count = int(a_step)
        store.critic_adam.first_moment[:] = z["critic_m"]
        store.critic_adam.second_moment[:] = z["critic_v"]
        store.critic_adam.step_count = int(c_step)
        scheme = Scheme(str(z["scheme"]))
    if actor.n_out != scheme.n_actions:
        raise ValueError("checkpoint actor width does not match its scheme")
    return store, scheme


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainerConfig:
    hidden: tuple[int, ...] = (64, 64)
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    entropy_coef: float = 0.01
    grad_clip: float = 1.0
    workers: int = 8
    episodes: int = 8000
    sync_every: int = 1
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.workers < 1 or self.episodes < 1 or self.sync_every < 1:
            raise ValueError("workers, episodes and sync_every must be >= 1")


@dataclass
class TrainLog:
    seed: int
    episode_qfi: list[float] = field(default_factory=list)
    best_so_far: list[float] = field(default_factory=list)
    actor_loss: list[float] = field(default_factory=list)
    critic_loss: list[float] = field(default_factory=list)
    total_reward: list[float] = field(default_factory=list)
    worker: list[int] = field(default_factory=list)
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    actor: MlpParameters
    critic: MlpParameters
    log: TrainLog
    best_sequence: PulseSequence
    best_qfi: float
    store: ParameterStore


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> int:
    k = int(np.searchsorted(np.cumsum(probs), rng.random() * probs.sum(), side="right"))
    return min(k, len(probs) - 1)


def make_networks(physics: PhysicsConfig, cfg: TrainerConfig, rng: np.random.Generator):
    actor = init_mlp((physics.obs_dim, *cfg.hidden, physics.scheme.n_actions), rng)
    critic = init_mlp((physics.obs_dim, *cfg.hidden, 1), rng, out_scale=1.0)
    return actor, critic


def greedy_rollout(actor: MlpParameters, physics: PhysicsConfig) -> tuple[PulseSequence, EpisodeTrace]:
    """Argmax action at every step (ties go to the lowest code)."""
    def policy(obs, t):
        logits, _ = mlp_forward(actor, obs)
        return int(np.argmax(logits[0]))
    trace = run_episode(physics, policy)
    return PulseSequence.from_config(physics, trace.actions), trace


class _Shared:
    def __init__(self, cfg: TrainerConfig, physics: PhysicsConfig, seed: int, store: ParameterStore):
        self.cfg = cfg
        self.physics = physics
        self.store = store
        self.log = TrainLog(seed=seed)
        self.lock = threading.Lock()
        self.next_episode = 0
        self.best_qfi = -np.inf
        self.best_actions: list[int] | None = None
        self.best_params: tuple[MlpParameters, MlpParameters] | None = None
        self.error: BaseException | None = None

    def claim(self) -> int | None:
        with self.lock:
            if self.error is not None or self.next_episode >= self.cfg.episodes:
                return None
            k = self.next_episode
            self.next_episode += 1
            return k

    def record(self, worker: int, trace: EpisodeTrace, grads: EpisodeGradients,
               actor: MlpParameters, critic: MlpParameters) -> None:
        with self.lock:
            q = trace.final_qfi
            if q > self.best_qfi:
                self.best_qfi = q
                self.best_actions = list(trace.actions)
                self.best_params = (actor.copy(), critic.copy())
            lg = self.log
            lg.episode_qfi.append(q)
            lg.best_so_far.append(self.best_qfi)
            lg.actor_loss.append(grads.actor_loss)
            lg.critic_loss.append(grads.critic_loss)
            lg.total_reward.append(trace.total_reward)
            lg.worker.append(worker)


def _worker(wid: int, shared: _Shared, rng: np.random.Generator) -> None:
    cfg, physics = shared.cfg, shared.physics
    actor, critic, _ = shared.store.snapshot()
    since_sync = 0
    while True:
        episode = shared.claim()
        if episode is None:
            return
        episode_seed = int(rng.integers(2**63))
        ep_rng = np.random.default_rng(episode_seed)

        def policy(obs, t):
            probs, _ = policy_value(actor, critic, obs)
            return sample_action(probs, ep_rng)

        try:
            trace = run_episode(physics, policy)
            grads = episode_gradients(actor, critic, trace, physics.n_atoms,
                                      cfg.entropy_coef, cfg.grad_clip)
            if not (np.isfinite(grads.actor_loss) and np.isfinite(grads.critic_loss)):
                raise TrainingDivergence(f"non-finite loss in episode {episode}", episode_seed)
        except TrainingDivergence as exc:
            if exc.episode_seed is None:
                exc = TrainingDivergence(str(exc), episode_seed, exc.dump)
            with shared.lock:
                shared.error = exc
            return
        shared.record(wid, trace, grads, actor, critic)
        shared.store.apply(grads.actor, grads.critic)
        since_sync += 1
        if since_sync >= cfg.sync_every:
            actor, critic, _ = shared.store.snapshot()
            since_sync = 0


def train(physics: PhysicsConfig, cfg: TrainerConfig, store: ParameterStore | None = None) -> TrainResult:
    """Run A3C for `cfg.episodes` episodes shared across `cfg.workers` workers.

    With one worker everything runs on the calling thread and is bit-reproducible for a
    fixed seed.
    """
    seq = np.random.SeedSequence(cfg.seed)
    init_ss, *worker_ss = seq.spawn(cfg.workers + 1)
    if store is None:
        actor, critic = make_networks(physics, cfg, np.random.default_rng(init_ss))
        store = ParameterStore(actor, critic, cfg.actor_lr, cfg.critic_lr)
    elif store.actor.n_out != physics.scheme.n_actions or store.actor.sizes[0] != physics.obs_dim:
        raise ValueError("parameter store does not match the physics configuration")
    shared = _Shared(cfg, physics, cfg.seed, store)
    rngs = [np.random.default_rng(s) for s in worker_ss]

    t0 = time.perf_counter()
    if cfg.workers == 1:
        _worker(0, shared, rngs[0])
    else:
        threads = [threading.Thread(target=_worker, args=(w, shared, rngs[w]), daemon=True)
                   for w in range(cfg.workers)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
    shared.log.wall_clock = time.perf_counter() - t0
    if shared.error is not None:
        raise shared.error

    # the greedy policy of the final network competes with the sampled episodes
    final_actor, final_critic, _ = store.snapshot()
    g_seq, g_trace = greedy_rollout(final_actor, physics)
    if g_trace.final_qfi > shared.best_qfi:
        shared.best_qfi = g_trace.final_qfi
        shared.best_actions = list(g_seq.actions)
        shared.best_params = (final_actor, final_critic)

    best_actor, best_critic = shared.best_params
    log.info("trained %d episodes in %.1fs, best F_Q = %.4g", cfg.episodes,
             shared.log.wall_clock, shared.best_qfi)
    return TrainResult(best_actor, best_critic, shared.log,
                       PulseSequence.from_config(physics, shared.best_actions),
                       float(shared.best_qfi), store)
