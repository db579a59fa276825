"""Episodic pulse-sequence environment and the sequence file format."""
from __future__ import annotations

import enum
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .metrology import optimal_squeezing_time, qfi_generator_z
from .spin import Action, SpinState, apply_action, css_initial, observation

SEQUENCE_FORMAT_VERSION = 1

# total times quoted for chi = 1, n_t = 50
REFERENCE_TOTAL_TIME = {100: 0.13, 1000: 0.015}


class Scheme(str, enum.Enum):
    ONLY_X = "only-x"
    BOTH_XY = "both-xy"

    @property
    def n_actions(self) -> int:
        return 2 if self is Scheme.ONLY_X else 3

    @property
    def actions(self) -> tuple[Action, ...]:
        return tuple(Action(k) for k in range(self.n_actions))


class IllegalActionError(ValueError):
    pass


@dataclass
class PhysicsConfig:
    n_atoms: int
    total_time: float | None = None
    chi: float = 1.0
    n_intervals: int = 50
    scheme: Scheme = Scheme.ONLY_X
    observe_time: bool = False

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)
        if self.n_atoms < 1:
            raise ValueError(f"invalid system size: n_atoms={self.n_atoms}")
        if self.chi <= 0 or self.n_intervals < 1:
            raise ValueError("chi must be positive and n_intervals >= 1")
        if self.total_time is None:
            self.total_time = optimal_squeezing_time(self.n_atoms, self.chi)
        if not self.total_time > 0:
            raise ValueError(f"total_time must be positive, got {self.total_time}")

    @property
    def dt(self) -> float:
        return self.total_time / self.n_intervals

    @property
    def chi_dt(self) -> float:
        return self.chi * self.dt

    @property
    def obs_dim(self) -> int:
        return 7 if self.observe_time else 6

    def check_action(self, action) -> Action:
        try:
            a = Action(int(action))
        except ValueError:
            raise IllegalActionError(f"unknown action code {action!r}") from None
        if a not in self.scheme.actions:
            raise IllegalActionError(f"action {a.name} not allowed under scheme {self.scheme.value}")
        return a

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scheme"] = self.scheme.value
        return d


@dataclass
class PulseSequence:
    n_atoms: int
    chi: float
    total_time: float
    n_intervals: int
    scheme: Scheme
    actions: list[int]

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)
        self.actions = [int(a) for a in self.actions]
        if len(self.actions) != self.n_intervals:
            raise ValueError(f"{len(self.actions)} actions for {self.n_intervals} intervals")
        cfg = self.physics()
        for a in self.actions:
            cfg.check_action(a)

    @classmethod
    def from_config(cls, config: PhysicsConfig, actions: Sequence[int]) -> "PulseSequence":
        return cls(config.n_atoms, config.chi, config.total_time, config.n_intervals,
                   config.scheme, list(actions))

    def physics(self, n_atoms: int | None = None) -> PhysicsConfig:
        return PhysicsConfig(n_atoms=self.n_atoms if n_atoms is None else n_atoms,
                             total_time=self.total_time, chi=self.chi,
                             n_intervals=self.n_intervals, scheme=self.scheme)

    @property
    def chi_dt(self) -> float:
        return self.chi * self.total_time / self.n_intervals

    def n_pulses(self, kind: Action | None = None) -> int:
        if kind is None:
            return sum(a != Action.FREE for a in self.actions)
        return sum(a == kind for a in self.actions)

    def as_string(self) -> str:
        return "".join(str(a) for a in self.actions)

    def to_json(self) -> str:
        return json.dumps({
            "format_version": SEQUENCE_FORMAT_VERSION,
            "n_atoms": self.n_atoms,
            "chi": self.chi,
            "total_time": self.total_time,
            "n_intervals": self.n_intervals,
            "scheme": self.scheme.value,
            "actions": self.actions,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PulseSequence":
        d = json.loads(text)
        version = d.pop("format_version", None)
        if version != SEQUENCE_FORMAT_VERSION:
            raise ValueError(f"unsupported pulse-sequence format_version {version!r}")
        return cls(**d)

    def save(self, path) -> None:
        write_atomic(path, self.to_json())

    @classmethod
    def load(cls, path) -> "PulseSequence":
        return cls.from_json(Path(path).read_text())


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


@dataclass
class EpisodeTrace:
    observations: list[np.ndarray] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    qfi_series: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    final_state: SpinState | None = None

    @property
    def final_qfi(self) -> float:
        return self.qfi_series[-1]

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))


def make_observation(state: SpinState, step: int, config: PhysicsConfig) -> np.ndarray:
    obs = observation(state)
    if config.observe_time:
        obs = np.append(obs, step / config.n_intervals)
    return obs


# a policy maps (observation, step) -> action code
Policy = Callable[[np.ndarray, int], int]


def run_episode(config: PhysicsConfig, action_source: Policy | Sequence[int]) -> EpisodeTrace:
    """Roll out n_t intervals from the CSS.

    `action_source` is either a fixed list of action codes or a callable policy.
    """
    if callable(action_source):
        policy = action_source
    else:
        fixed = list(action_source)
        if len(fixed) != config.n_intervals:
            raise ValueError(f"{len(fixed)} actions for {config.n_intervals} intervals")
        policy = lambda obs, t: fixed[t]  # noqa: E731

    state = css_initial(config.n_atoms)
    trace = EpisodeTrace(qfi_series=[qfi_generator_z(state)])
    chi_dt = config.chi_dt
    for t in range(config.n_intervals):
        obs = make_observation(state, t, config)
        a = config.check_action(policy(obs, t))
        state = apply_action(state, a, chi_dt)
        trace.observations.append(obs)
        trace.actions.append(int(a))
        trace.qfi_series.append(qfi_generator_z(state))
    trace.final_state = state
    trace.rewards = assign_rewards(trace.qfi_series)
    return trace


def final_qfi(config: PhysicsConfig, actions: Sequence[int]) -> float:
    state = css_initial(config.n_atoms)
    for a in actions:
        state = apply_action(state, config.check_action(a), config.chi_dt)
    return qfi_generator_z(state)


def assign_rewards(qfi_series: Sequence[float]) -> list[float]:
    """r_t = max_{t <= i <= n_t} F_Q^(i): running maximum over the remaining suffix."""
    if len(qfi_series) == 0:
        raise ValueError("empty QFI series")
    return np.maximum.accumulate(np.asarray(qfi_series, dtype=float)[::-1])[::-1].tolist()


def normalized_rewards(rewards: Sequence[float], n_atoms: int) -> np.ndarray:
    return np.asarray(rewards, dtype=float) / float(n_atoms) ** 2
