"""Gilbert-Elliot channel model, belief recursion and the false-alarm threshold.

Channels are two-state Markov chains (0 = bad, 1 = good).  A belief is the
conditional probability that a channel is good.  Channel indices exposed to
callers are 1-based; belief vectors are plain tuples where channel ``k``
lives at position ``k - 1``.

The miss-detection probability ``delta`` never enters a belief update or an
expected reward: a NAK does not reveal whether the transmitter stayed silent
or transmitted over a bad channel.  It is kept on the model for the
simulator.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Sequence

ACK = 1
NAK = 0

Belief = tuple[float, ...]


class ZeroProbabilityObservation(ValueError):
    """Raised when conditioning on an observation that cannot occur."""


class CorrelationSign(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


def _check_prob(name: str, value: float, lo_open: bool, hi_open: bool) -> None:
    lo_ok = value > 0.0 if lo_open else value >= 0.0
    hi_ok = value < 1.0 if hi_open else value <= 1.0
    if not (lo_ok and hi_ok):
        lo = "(" if lo_open else "["
        hi = ")" if hi_open else "]"
        raise ValueError(f"{name}={value!r} outside {lo}0, 1{hi}")


@dataclass(frozen=True)
class ChannelModel:
    """Transition probabilities and detector error rates.

    ``strict=False`` relaxes every parameter to the closed interval; only the
    simulator accepts such models.
    """

    p01: float
    p11: float
    epsilon: float = 0.0
    delta: float = 0.0
    strict: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        for name in ("p01", "p11", "epsilon", "delta"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.strict:
            _check_prob("p01", self.p01, True, True)
            _check_prob("p11", self.p11, True, True)
            _check_prob("epsilon", self.epsilon, False, True)
            _check_prob("delta", self.delta, False, True)
        else:
            for name in ("p01", "p11", "epsilon", "delta"):
                _check_prob(name, getattr(self, name), False, False)

    @classmethod
    def relaxed(cls, p01, p11, epsilon=0.0, delta=0.0) -> "ChannelModel":
        return cls(p01, p11, epsilon, delta, strict=False)

    @property
    def p00(self) -> float:
        return 1.0 - self.p01

    @property
    def p10(self) -> float:
        return 1.0 - self.p11

    @property
    def sign(self) -> CorrelationSign:
        return CorrelationSign.POSITIVE if self.p11 >= self.p01 else CorrelationSign.NEGATIVE

    @property
    def band(self) -> tuple[float, float]:
        """Interval every belief enters after one update."""
        return min(self.p01, self.p11), max(self.p01, self.p11)

    @property
    def stationary(self) -> float:
        """Long-run probability of the good state."""
        denom = self.p01 + self.p10
        if denom == 0.0:
            raise ValueError("chain has no unique stationary distribution")
        return self.p01 / denom

    def with_delta(self, delta: float) -> "ChannelModel":
        return ChannelModel(self.p01, self.p11, self.epsilon, delta, strict=self.strict)

    def to_dict(self) -> dict:
        return {"p01": self.p01, "p11": self.p11, "epsilon": self.epsilon, "delta": self.delta}

    @classmethod
    def from_dict(cls, data: dict) -> "ChannelModel":
        missing = {"p01", "p11", "epsilon", "delta"} - set(data)
        if missing:
            raise ValueError(f"channel model missing keys: {sorted(missing)}")
        return cls(data["p01"], data["p11"], data["epsilon"], data["delta"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ChannelModel":
        return cls.from_dict(json.loads(text))


def _check_unit(x: float, name: str = "x") -> None:
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name}={x!r} is not a probability")


def gamma(x: float, model: ChannelModel) -> float:
    """One-step prediction: probability of good next slot given P(good now) = x."""
    _check_unit(x)
    return x * model.p11 + (1.0 - x) * model.p01


def nak_likelihood_ratio_posterior(omega: float, epsilon: float) -> float:
    """P(good now | NAK now) before the Markov step."""
    denom = epsilon * omega + (1.0 - omega)
    if denom <= 0.0:
        raise ZeroProbabilityObservation(
            f"NAK has zero probability at omega={omega!r}, epsilon={epsilon!r}")
    return epsilon * omega / denom


def nak_posterior(omega: float, model: ChannelModel) -> float:
    """Next-slot belief of the sensed channel after a NAK."""
    _check_unit(omega, "omega")
    return gamma(nak_likelihood_ratio_posterior(omega, model.epsilon), model)


def ack_probability(omega: float, model: ChannelModel) -> float:
    """Probability of ACK, which is also the expected one-slot reward."""
    _check_unit(omega, "omega")
    return omega * (1.0 - model.epsilon)


def belief_update(omega: Sequence[float], action: int, obs: int, model: ChannelModel) -> Belief:
    """Bayes update of the whole belief vector after sensing ``action`` (1-based)."""
    n = len(omega)
    if not 1 <= action <= n:
        raise ValueError(f"action {action} outside 1..{n}")
    if obs not in (ACK, NAK):
        raise ValueError(f"observation must be ACK (1) or NAK (0), got {obs!r}")
    p11, p01 = model.p11, model.p01
    out = []
    for i, w in enumerate(omega, start=1):
        if i == action:
            out.append(p11 if obs == ACK else nak_posterior(w, model))
        else:
            _check_unit(w, "omega")
            out.append(w * p11 + (1.0 - w) * p01)
    return tuple(out)


@dataclass(frozen=True)
class EpsilonBound:
    bound: float
    satisfied: bool

    def __iter__(self):
        return iter((self.bound, self.satisfied))


def epsilon_bound(model: ChannelModel) -> EpsilonBound:
    """Largest false-alarm rate (exclusive) under which the round-robin structure holds."""
    p01, p11, p00, p10 = model.p01, model.p11, model.p00, model.p10
    if p11 >= p01:
        bound = p10 * p01 / (p11 * p00)
    else:
        bound = p00 * p11 / (p01 * p10)
    return EpsilonBound(bound, model.epsilon < bound)


def is_transient(omega: float, model: ChannelModel) -> bool:
    _check_unit(omega, "omega")
    lo, hi = model.band
    return not lo <= omega <= hi


def stationary_belief(model: ChannelModel, n: int) -> Belief:
    return (model.stationary,) * n
