"""Monte Carlo simulation of sensing, access and ACK/NAK feedback.

Each episode owns a random stream seeded from ``(seed, episode)`` and draws a
fixed block of uniforms in a fixed layout, so the i-th episode is the same
whether it is run alone or inside a batch, and whatever policy is run on it:

    [0, N)                       initial channel states
    [N, N + T)                   detector draw for slots 1..T
    [N + T, N + T + (T-1) * N)   state transitions into slots 2..T
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .channel_model import ACK, NAK, ChannelModel, belief_update
from .policy import Policy

EVENT_SUCCESS = "i"
EVENT_FALSE_ALARM = "ii"
EVENT_IDLE = "iii"
EVENT_COLLISION = "iv"

MAX_COMPILED_HORIZON = 20


def step_channels(states, model: ChannelModel, rng: np.random.Generator) -> np.ndarray:
    """Advance each 0/1 channel state one slot, independently."""
    states = np.asarray(states)
    if states.size and not np.isin(states, (0, 1)).all():
        raise ValueError("channel states must be 0 or 1")
    return _transition(states, rng.random(states.shape), model)


def _transition(states, u, model):
    good_next = np.where(states == 1, model.p11, model.p01)
    return (u < good_next).astype(np.int8)


@dataclass(frozen=True)
class SenseResult:
    decision: str          # "H0" (judged good) or "H1" (judged bad)
    transmitted: bool
    observation: int
    reward: int
    event: str


def _sense(state: int, u: float, model: ChannelModel) -> SenseResult:
    if state == 1:
        if u < model.epsilon:
            return SenseResult("H1", False, NAK, 0, EVENT_FALSE_ALARM)
        return SenseResult("H0", True, ACK, 1, EVENT_SUCCESS)
    if u < model.delta:
        return SenseResult("H0", True, NAK, 0, EVENT_COLLISION)
    return SenseResult("H1", False, NAK, 0, EVENT_IDLE)


def sense_and_access(state: int, model: ChannelModel, rng: np.random.Generator) -> SenseResult:
    if state not in (0, 1):
        raise ValueError("channel state must be 0 or 1")
    return _sense(state, rng.random(), model)


@dataclass
class SimConfig:
    model: ChannelModel
    n: int
    horizon: int
    episodes: int = 1000
    seed: int = 0
    omega1: Optional[tuple[float, ...]] = None  # None: stationary start
    policy: str = "myopic-argmax"

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episode count must be >= 1")
        if self.n < 1 or self.horizon < 1:
            raise ValueError("need at least one channel and one slot")
        if self.omega1 is not None:
            self.omega1 = tuple(float(w) for w in self.omega1)
            if len(self.omega1) != self.n:
                raise ValueError("initial belief length must equal n")

    @property
    def initial_belief(self) -> tuple[float, ...]:
        if self.omega1 is None:
            return (self.model.stationary,) * self.n
        return self.omega1

    @property
    def block_size(self) -> int:
        return self.n + self.horizon + (self.horizon - 1) * self.n

    def metadata(self) -> dict:
        return {
            "model": self.model.to_dict(), "n": self.n, "horizon": self.horizon,
            "episodes": self.episodes, "seed": self.seed, "policy": self.policy,
            "initial_belief": list(self.initial_belief),
            "initial_distribution": "stationary" if self.omega1 is None else "explicit",
        }


def episode_rng(seed: int, episode: int) -> np.random.Generator:
    return np.random.default_rng([seed, episode])


def episode_draws(config: SimConfig, episode: int) -> np.ndarray:
    return episode_rng(config.seed, episode).random(config.block_size)


@dataclass
class SlotRecord:
    episode: int
    slot: int
    states: list[int]
    action: int
    decision: str
    transmitted: bool
    event: str
    observation: int
    reward: int


@dataclass
class EpisodeTrace:
    episode: int
    records: list[SlotRecord] = field(default_factory=list)

    @property
    def total_reward(self) -> int:
        return sum(r.reward for r in self.records)

    @property
    def actions(self) -> list[int]:
        return [r.action for r in self.records]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.records)


def run_episode(config: SimConfig, policy: Policy, episode: int = 0) -> EpisodeTrace:
    """Closed-loop run: the policy sees only ACK/NAK (plus exact beliefs if it tracks them)."""
    model, n, horizon = config.model, config.n, config.horizon
    u = episode_draws(config, episode)
    omega = config.initial_belief
    states = (u[:n] < np.asarray(omega)).astype(np.int8)
    det = u[n:n + horizon]
    trans = u[n + horizon:].reshape(horizon - 1, n) if horizon > 1 else None

    state = policy.start(omega, model)
    trace = EpisodeTrace(episode)
    for t in range(1, horizon + 1):
        if t > 1:
            states = _transition(states, trans[t - 2], model)
        a = policy.act(state, omega)
        res = _sense(int(states[a - 1]), det[t - 1], model)
        trace.records.append(SlotRecord(episode, t, [int(s) for s in states], a, res.decision,
                                        res.transmitted, res.event, res.observation, res.reward))
        if t < horizon:
            if policy.uses_belief:
                omega = belief_update(omega, a, res.observation, model)
            state = policy.advance(state, a, res.observation)
    return trace


def compile_policy(policy: Policy, omega1: Sequence[float], model: ChannelModel,
                   horizon: int) -> np.ndarray:
    """Action table indexed by observation history.

    Node 1 is slot 1; the node after observing ``k`` at node ``j`` is
    ``2 * j + k``.  Unreachable nodes hold 0.
    """
    if horizon > MAX_COMPILED_HORIZON:
        raise ValueError(f"horizon {horizon} too long to tabulate (max {MAX_COMPILED_HORIZON})")
    table = np.zeros(2 ** horizon, dtype=np.int64)
    eps = model.epsilon
    stack = [(1, 1, tuple(float(w) for w in omega1), policy.start(omega1, model))]
    while stack:
        node, t, omega, state = stack.pop()
        a = policy.act(state, omega)
        table[node] = a
        if t == horizon:
            continue
        p_ack = omega[a - 1] * (1.0 - eps)
        for obs, p in ((ACK, p_ack), (NAK, 1.0 - p_ack)):
            if p <= 0.0:
                continue
            stack.append((2 * node + obs, t + 1, belief_update(omega, a, obs, model),
                          policy.advance(state, a, obs)))
    return table


def draw_all(config: SimConfig) -> np.ndarray:
    """Uniform blocks for every episode, one row per episode."""
    u = np.empty((config.episodes, config.block_size))
    for i in range(config.episodes):
        u[i] = episode_draws(config, i)
    return u


def simulate_rewards(config: SimConfig, policy: Policy, draws: Optional[np.ndarray] = None) -> np.ndarray:
    """Total reward of every episode, vectorized over episodes.

    ``draws`` lets several policies share one set of episodes.
    """
    model, n, horizon, e = config.model, config.n, config.horizon, config.episodes
    table = compile_policy(policy, config.initial_belief, model, horizon)
    u = draw_all(config) if draws is None else draws
    if u.shape != (e, config.block_size):
        raise ValueError("draws do not match the configuration")
    states = (u[:, :n] < np.asarray(config.initial_belief)).astype(np.int8)
    det = u[:, n:n + horizon]
    trans = u[:, n + horizon:].reshape(e, horizon - 1, n)
    node = np.ones(e, dtype=np.int64)
    total = np.zeros(e, dtype=np.int64)
    rows = np.arange(e)
    for t in range(1, horizon + 1):
        if t > 1:
            states = _transition(states, trans[:, t - 2], model)
        a = table[node]
        ack = (states[rows, a - 1] == 1) & (det[:, t - 1] >= model.epsilon)
        total += ack
        node = 2 * node + ack
    return total


def estimate_throughput(config: SimConfig, policy: Policy,
                        draws: Optional[np.ndarray] = None) -> tuple[float, float]:
    """Sample mean and standard error of the total episode reward."""
    if config.episodes < 2:
        raise ValueError("need at least two episodes for a standard error")
    totals = simulate_rewards(config, policy, draws)
    return float(totals.mean()), float(totals.std(ddof=1) / np.sqrt(len(totals)))


def totals_csv(totals: Sequence[int]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode", "total_reward"])
    for i, r in enumerate(totals):
        w.writerow([i, int(r)])
    return buf.getvalue()
