"""Myopic channel selection: belief argmax and its round-robin realization.

Every policy here is a deterministic function of the initial belief and the
ACK/NAK history, exposed through a small interface:

    state = policy.start(omega1, model)
    action = policy.act(state, omega)          # omega: exact current belief
    state = policy.advance(state, action, obs)

Policies that do not need the belief (structural, fixed, random) ignore it.
States are hashable so planners can memoize on them.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .channel_model import (
    ACK,
    NAK,
    ChannelModel,
    CorrelationSign,
    ZeroProbabilityObservation,
    belief_update,
    epsilon_bound,
    is_transient,
    nak_likelihood_ratio_posterior,
)


class StructureUnavailable(ValueError):
    """The false-alarm rate is not below the threshold; use belief tracking instead."""


def myopic_action(omega: Sequence[float]) -> int:
    """1-based index of the largest belief, lowest index on ties."""
    if len(omega) == 0:
        raise ValueError("empty belief vector")
    best = 0
    for i in range(1, len(omega)):
        if omega[i] > omega[best]:
            best = i
    return best + 1


def argmax_set(omega: Sequence[float], tol: float = 0.0) -> frozenset[int]:
    """All channels whose belief is within ``tol`` of the maximum."""
    if len(omega) == 0:
        raise ValueError("empty belief vector")
    top = max(omega)
    return frozenset(i for i, w in enumerate(omega, start=1) if w >= top - tol)


class CircularOrder:
    """A cyclic arrangement of channels; rotations compare equal."""

    __slots__ = ("channels", "_succ", "_key")

    def __init__(self, channels: Sequence[int]):
        channels = tuple(int(c) for c in channels)
        if sorted(channels) != list(range(1, len(channels) + 1)):
            raise ValueError(f"{channels} is not a permutation of 1..{len(channels)}")
        self.channels = channels
        n = len(channels)
        self._succ = {channels[i]: channels[(i + 1) % n] for i in range(n)}
        if n:
            k = channels.index(1)
            self._key = channels[k:] + channels[:k]
        else:
            self._key = ()

    def __len__(self):
        return len(self.channels)

    def __iter__(self):
        return iter(self.channels)

    def __eq__(self, other):
        if not isinstance(other, CircularOrder):
            return NotImplemented
        return self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        return f"CircularOrder({self.channels})"

    def successor(self, channel: int) -> int:
        return self._succ[channel]

    def reverse(self) -> "CircularOrder":
        return CircularOrder(self.channels[::-1])

    def starting_at(self, channel: int) -> tuple[int, ...]:
        k = self.channels.index(channel)
        return self.channels[k:] + self.channels[:k]


def descending_order(omega: Sequence[float]) -> tuple[int, ...]:
    # stable: equal beliefs keep ascending channel index
    return tuple(i + 1 for i in sorted(range(len(omega)), key=lambda i: -omega[i]))


@dataclass(frozen=True)
class StructuralPolicyState:
    base_order: CircularOrder
    current_channel: int
    slot: int
    sign: CorrelationSign
    transient_pending: bool = False
    # channels by descending initial belief; maps rank positions to labels
    initial_ranking: tuple[int, ...] = ()
    rank: Optional[int] = None

    def effective_order(self, slot: Optional[int] = None) -> CircularOrder:
        t = self.slot if slot is None else slot
        if self.sign is CorrelationSign.NEGATIVE and t % 2 == 0:
            return self.base_order.reverse()
        return self.base_order


def nak_rank(omega: Sequence[float], model: ChannelModel) -> Optional[int]:
    """Position of the first sensed channel's post-NAK belief among the others.

    Ties resolve to the smallest rank.  Returns None when a NAK on that
    channel is impossible (belief 1 with a perfect detector).
    """
    ranking = descending_order(omega)
    top = omega[ranking[0] - 1]
    try:
        x = nak_likelihood_ratio_posterior(top, model.epsilon)
    except ZeroProbabilityObservation:
        return None
    return 1 + sum(1 for c in ranking[1:] if omega[c - 1] > x)


def structural_init(omega1: Sequence[float], model: ChannelModel,
                    check_bound: bool = True) -> StructuralPolicyState:
    """Slot-1 state: descending initial order, argmax channel, transient bookkeeping.

    ``check_bound=False`` builds the state even when the false-alarm rate is
    too high; only useful for hunting counterexamples.
    """
    if len(omega1) == 0:
        raise ValueError("empty belief vector")
    bound = epsilon_bound(model)
    if check_bound and not bound.satisfied:
        raise StructureUnavailable(
            f"epsilon={model.epsilon} is not below {bound.bound}; "
            "fall back to argmax with belief tracking")
    ranking = descending_order(omega1)
    transient = any(is_transient(w, model) for w in omega1)
    return StructuralPolicyState(
        base_order=CircularOrder(ranking),
        current_channel=ranking[0],
        slot=1,
        sign=model.sign,
        transient_pending=transient and len(omega1) > 1,
        initial_ranking=ranking,
        rank=nak_rank(omega1, model) if transient else None,
    )


def transient_slot2_action(r: int, sign: CorrelationSign, n: int) -> tuple[int, tuple[int, ...]]:
    """Slot-2 action and corrected slot-1 order after a NAK on a transient start.

    Channels are labelled by initial rank (1 = largest initial belief).
    """
    if not 1 <= r <= n:
        raise ValueError(f"rank {r} outside 1..{n}")
    if sign is CorrelationSign.POSITIVE:
        action = 1 if r == 1 else 2
    else:
        action = 1 if r == n else n
    if r == 1:
        order = tuple(range(1, n + 1))
    else:
        order = tuple(range(2, r + 1)) + (1,) + tuple(range(r + 1, n + 1))
    return action, order


def structural_step(state: StructuralPolicyState, obs: int) -> tuple[StructuralPolicyState, int]:
    """Consume the ACK/NAK for the current slot; return the next state and action."""
    if obs not in (ACK, NAK):
        raise ValueError(f"observation must be ACK (1) or NAK (0), got {obs!r}")
    n = len(state.base_order)
    nxt = state.slot + 1
    if n == 1:
        return StructuralPolicyState(state.base_order, 1, nxt, state.sign), 1

    if state.transient_pending and state.slot == 1 and obs == NAK:
        if state.rank is None:
            raise ZeroProbabilityObservation("NAK on a channel known to be good")
        action, canon = transient_slot2_action(state.rank, state.sign, n)
        labels = state.initial_ranking
        new = StructuralPolicyState(
            base_order=CircularOrder(labels[k - 1] for k in canon),
            current_channel=labels[action - 1],
            slot=nxt,
            sign=state.sign,
        )
        return new, new.current_channel

    stay_on = ACK if state.sign is CorrelationSign.POSITIVE else NAK
    if obs == stay_on:
        action = state.current_channel
    else:
        action = state.effective_order(nxt).successor(state.current_channel)
    new = StructuralPolicyState(state.base_order, action, nxt, state.sign)
    return new, action


class Policy:
    name = "policy"
    uses_belief = False

    def start(self, omega1: Sequence[float], model: ChannelModel):
        return None

    def act(self, state, omega: Sequence[float]) -> int:
        raise NotImplementedError

    def advance(self, state, action: int, obs: int):
        return state

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


class MyopicPolicy(Policy):
    name = "myopic-argmax"
    uses_belief = True

    def act(self, state, omega):
        return myopic_action(omega)


class StructuralPolicy(Policy):
    name = "structural"

    def __init__(self, check_bound: bool = True):
        self.check_bound = check_bound

    def start(self, omega1, model):
        return structural_init(omega1, model, self.check_bound)

    def act(self, state, omega):
        return state.current_channel

    def advance(self, state, action, obs):
        return structural_step(state, obs)[0]


@dataclass(frozen=True)
class _HistoryState:
    n: int
    slot: int = 1
    history: int = 1  # leading 1 marks the start of the bit string


class FixedPolicy(Policy):
    def __init__(self, channel: int):
        if channel < 1:
            raise ValueError("channel index is 1-based")
        self.channel = channel
        self.name = f"fixed:{channel}"

    def start(self, omega1, model):
        if self.channel > len(omega1):
            raise ValueError(f"channel {self.channel} outside 1..{len(omega1)}")
        return None

    def act(self, state, omega):
        return self.channel


class RandomPolicy(Policy):
    """Uniform action per observation history, reproducible from ``seed``.

    The draw for a node depends only on (seed, slot, history), so the policy
    is one fixed decision tree and can be evaluated exactly.
    """

    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def start(self, omega1, model):
        return _HistoryState(len(omega1))

    def act(self, state, omega):
        rng = random.Random(f"{self.seed}:{state.slot}:{state.history}")
        return rng.randint(1, state.n)

    def advance(self, state, action, obs):
        return _HistoryState(state.n, state.slot + 1, (state.history << 1) | obs)


def policy_from_name(name: str, seed: int = 0) -> Policy:
    if name in ("myopic", "myopic-argmax"):
        return MyopicPolicy()
    if name == "structural":
        return StructuralPolicy()
    if name == "random":
        return RandomPolicy(seed)
    if name.startswith("fixed:"):
        return FixedPolicy(int(name.split(":", 1)[1]))
    raise ValueError(f"unknown policy {name!r}")


@dataclass
class Divergence:
    path: tuple[int, ...]
    slot: int
    beliefs: tuple[float, ...]
    action: int
    reference_action: int

    def to_dict(self):
        return {"path": list(self.path), "slot": self.slot, "beliefs": list(self.beliefs),
                "action": self.action, "reference_action": self.reference_action}


@dataclass
class EquivalenceReport:
    agree: bool
    paths: int = 0
    slots_compared: int = 0
    exact_matches: int = 0
    divergences: int = 0
    first_divergence: Optional[Divergence] = None
    divergent_slots: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "agree": self.agree,
            "paths": self.paths,
            "slots_compared": self.slots_compared,
            "exact_matches": self.exact_matches,
            "divergences": self.divergences,
            "divergent_slots": {str(k): v for k, v in sorted(self.divergent_slots.items())},
            "first_divergence": None if self.first_divergence is None
            else self.first_divergence.to_dict(),
        }


def equivalent_actions(policy: Policy, reference: Policy, omega1: Sequence[float],
                       model: ChannelModel, horizon: int, tol: float = 0.0) -> EquivalenceReport:
    """Compare two policies on every positive-probability observation path.

    Beliefs are tracked exactly.  A slot counts as agreeing when the actions
    coincide or, with ``tol`` > 0, when the two chosen channels' beliefs are
    within ``tol`` of each other (so argmax ties are not divergences).
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rep = EquivalenceReport(agree=True)
    eps = model.epsilon
    path: list[int] = []

    def walk(t, omega, s_pol, s_ref):
        a = policy.act(s_pol, omega)
        b = reference.act(s_ref, omega)
        rep.slots_compared += 1
        if a == b:
            rep.exact_matches += 1
        elif abs(omega[a - 1] - omega[b - 1]) > tol:
            rep.agree = False
            rep.divergences += 1
            rep.divergent_slots[t] = rep.divergent_slots.get(t, 0) + 1
            if rep.first_divergence is None:
                rep.first_divergence = Divergence(tuple(path), t, tuple(omega), a, b)
        if t == horizon:
            rep.paths += 1
            return
        # observations come from the channel the policy under test senses
        p_ack = omega[a - 1] * (1.0 - eps)
        for obs, p in ((ACK, p_ack), (NAK, 1.0 - p_ack)):
            if p <= 0.0:
                continue
            path.append(obs)
            walk(t + 1, belief_update(omega, a, obs, model),
                 policy.advance(s_pol, a, obs), reference.advance(s_ref, b, obs))
            path.pop()

    walk(1, tuple(float(w) for w in omega1), policy.start(omega1, model),
         reference.start(omega1, model))
    return rep
