"""Exact finite-horizon planning over the reachable belief tree.

Values are expected numbers of successful transmissions from slot ``t``
through slot ``T``.  Beliefs are memoized after rounding to 12 decimals.
Because channels are statistically identical the optimal value is
symmetric in the belief entries, so the optimal-value table is keyed on the
sorted vector; policy values are keyed on the vector as given (a policy may
treat channels asymmetrically).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .channel_model import ACK, NAK, ChannelModel, belief_update
from .policy import MyopicPolicy, Policy, myopic_action

KEY_DIGITS = 12
VALUE_TOL = 1e-12


def belief_key(slot: int, omega: Sequence[float], symmetric: bool = False) -> tuple:
    entries = tuple(round(w, KEY_DIGITS) for w in omega)
    if symmetric:
        entries = tuple(sorted(entries, reverse=True))
    return (slot, entries)


@dataclass
class ValueEntry:
    value: float
    optimal_actions: frozenset[int]
    action_values: dict[int, float]
    # (action, obs) -> (probability, continuation value)
    branches: dict[tuple[int, int], tuple[float, float]] = field(default_factory=dict)


def _check_horizon(t: int, horizon: int) -> None:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if not 1 <= t <= horizon:
        raise ValueError(f"slot {t} outside 1..{horizon}")


class Planner:
    """Memoized optimal and policy values for one (model, horizon) pair."""

    def __init__(self, model: ChannelModel, horizon: int, memoize: bool = True):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.model = model
        self.horizon = horizon
        self.memoize = memoize
        self._opt: dict = {}
        self._pol: dict = {}

    @property
    def node_count(self) -> int:
        return len(self._opt)

    def _branches(self, omega, a):
        p_ack = omega[a - 1] * (1.0 - self.model.epsilon)
        out = []
        if p_ack > 0.0:
            out.append((ACK, p_ack))
        if p_ack < 1.0:
            out.append((NAK, 1.0 - p_ack))
        return p_ack, out

    def _value(self, t: int, omega: tuple) -> float:
        key = belief_key(t, omega, symmetric=True)
        if self.memoize:
            hit = self._opt.get(key)
            if hit is not None:
                return hit
        eps = self.model.epsilon
        if t == self.horizon:
            v = max(omega) * (1.0 - eps)
        else:
            v = -1.0
            seen = set()
            for a in range(1, len(omega) + 1):
                # identical beliefs give identical action values
                if omega[a - 1] in seen:
                    continue
                seen.add(omega[a - 1])
                q = self._q(t, omega, a)
                if q > v:
                    v = q
        self._opt.setdefault(key, v)
        return v

    def _q(self, t, omega, a):
        p_ack, branches = self._branches(omega, a)
        q = p_ack
        if t < self.horizon:
            for obs, p in branches:
                q += p * self._value(t + 1, belief_update(omega, a, obs, self.model))
        return q

    def optimal(self, omega: Sequence[float], t: int = 1) -> ValueEntry:
        """Optimal value at ``(t, omega)`` with the full set of optimal actions."""
        _check_horizon(t, self.horizon)
        omega = tuple(float(w) for w in omega)
        q = {}
        branches = {}
        for a in range(1, len(omega) + 1):
            p_ack, obs_list = self._branches(omega, a)
            total = p_ack
            for obs, p in obs_list:
                cont = 0.0
                if t < self.horizon:
                    cont = self._value(t + 1, belief_update(omega, a, obs, self.model))
                branches[(a, obs)] = (p, cont)
                total += p * cont
            q[a] = total
        best = max(q.values())
        opt = frozenset(a for a, v in q.items() if v >= best - VALUE_TOL)
        return ValueEntry(best, opt, q, branches)

    def policy_value(self, policy: Policy, omega: Sequence[float], t: int = 1, state=None) -> float:
        """Expected reward of ``policy`` from slot ``t`` (started fresh unless ``state`` given)."""
        _check_horizon(t, self.horizon)
        omega = tuple(float(w) for w in omega)
        if state is None:
            state = policy.start(omega, self.model)
        return self._policy_value(policy, t, omega, state)

    def _policy_value(self, policy, t, omega, state):
        key = (policy.name, belief_key(t, omega), state) if self.memoize else None
        if key is not None:
            hit = self._pol.get(key)
            if hit is not None:
                return hit
        a = policy.act(state, omega)
        v = self._rollout_q(policy, t, omega, state, a)
        if key is not None:
            self._pol.setdefault(key, v)
        return v

    def _rollout_q(self, policy, t, omega, state, a):
        p_ack, branches = self._branches(omega, a)
        v = p_ack
        if t < self.horizon:
            for obs, p in branches:
                v += p * self._policy_value(policy, t + 1, belief_update(omega, a, obs, self.model),
                                            policy.advance(state, a, obs))
        return v

    def action_then_policy(self, policy: Policy, omega: Sequence[float], a: int, t: int = 1,
                           state=None) -> float:
        """Value of playing ``a`` at slot ``t`` and following ``policy`` afterwards."""
        _check_horizon(t, self.horizon)
        omega = tuple(float(w) for w in omega)
        if state is None:
            state = policy.start(omega, self.model)
        return self._rollout_q(policy, t, omega, state, a)

    def myopic_gaps(self, omega: Sequence[float], t: int = 1) -> dict[int, float]:
        myopic = MyopicPolicy()
        base = self.policy_value(myopic, omega, t)
        return {a: base - self.action_then_policy(myopic, omega, a, t)
                for a in range(1, len(omega) + 1)}


def optimal_value(omega: Sequence[float], t: int, horizon: int, model: ChannelModel) -> ValueEntry:
    return Planner(model, horizon).optimal(omega, t)


def policy_value(policy: Policy, omega: Sequence[float], horizon: int, model: ChannelModel) -> float:
    return Planner(model, horizon).policy_value(policy, omega)


def myopic_action_gap(omega: Sequence[float], t: int, horizon: int,
                      model: ChannelModel) -> dict[int, float]:
    """Myopic value minus the value of deviating to each action for one slot."""
    return Planner(model, horizon).myopic_gaps(omega, t)


def reachable_nodes(omega1: Sequence[float], horizon: int, model: ChannelModel,
                    policy: Optional[Policy] = None, first_actions: Optional[Sequence[int]] = None):
    """Distinct (slot, belief) nodes with positive probability.

    With ``policy=None`` every action is expanded.  Otherwise only the
    policy's actions are, except at slot 1 where ``first_actions`` (when
    given) overrides the policy.
    """
    omega1 = tuple(float(w) for w in omega1)
    eps = model.epsilon
    n = len(omega1)
    seen = set()
    out = []
    stack = [(1, omega1, policy.start(omega1, model) if policy else None)]
    while stack:
        t, omega, state = stack.pop()
        key = (belief_key(t, omega), state)
        if key in seen:
            continue
        seen.add(key)
        out.append((t, omega))
        if t == horizon:
            continue
        if policy is None:
            actions = range(1, n + 1)
        elif t == 1 and first_actions is not None:
            actions = first_actions
        else:
            actions = (policy.act(state, omega),)
        for a in actions:
            p_ack = omega[a - 1] * (1.0 - eps)
            for obs, p in ((ACK, p_ack), (NAK, 1.0 - p_ack)):
                if p <= 0.0:
                    continue
                nxt = policy.advance(state, a, obs) if policy else None
                stack.append((t + 1, belief_update(omega, a, obs, model), nxt))
    out.sort(key=lambda node: node[0])
    return out


@dataclass(frozen=True)
class ConditionalValue:
    slot: int
    prev_action: int
    prev_state: tuple[int, int]
    value: float


def conditional_myopic_value(prev_action: int, prev_state: Sequence[int], t: int, horizon: int,
                             model: ChannelModel) -> ConditionalValue:
    """Expected myopic reward from slot ``t`` given the previous action and joint state.

    Two channels only.  The previous slot's ACK arrives with probability
    1 - epsilon when the sensed channel was good; the round-robin rule then
    fixes the next channel, and the joint state moves by the Markov kernel.
    """
    if prev_action not in (1, 2):
        raise ValueError("conditional values are defined for two channels only")
    s = tuple(int(x) for x in prev_state)
    if len(s) != 2 or any(x not in (0, 1) for x in s):
        raise ValueError("prev_state must be a pair of 0/1 states")
    if not 1 <= t <= horizon + 1:
        raise ValueError(f"slot {t} outside 1..{horizon + 1}")
    return ConditionalValue(t, prev_action, s, _conditional_table(model, horizon)(prev_action, s, t))


@lru_cache(maxsize=256)
def _conditional_table(model: ChannelModel, horizon: int):
    eps = model.epsilon
    trans = {(0, 0): model.p00, (0, 1): model.p01, (1, 0): model.p10, (1, 1): model.p11}
    stay_on = ACK if model.p11 >= model.p01 else NAK

    @lru_cache(maxsize=None)
    def v(a, s, t):
        if t > horizon:
            return 0.0
        if s[a - 1] == 1:
            outcomes = ((ACK, 1.0 - eps), (NAK, eps))
        else:
            outcomes = ((NAK, 1.0),)
        total = 0.0
        for obs, p_obs in outcomes:
            if p_obs == 0.0:
                continue
            nxt = a if obs == stay_on else 3 - a
            # P(next channel good | its previous state)
            inner = trans[(s[nxt - 1], 1)] * (1.0 - eps)
            for s_new in itertools.product((0, 1), repeat=2):
                w = trans[(s[0], s_new[0])] * trans[(s[1], s_new[1])]
                inner += w * v(nxt, s_new, t + 1)
            total += p_obs * inner
        return total

    return v


def brute_force_optimal(omega: Sequence[float], horizon: int, model: ChannelModel) -> float:
    """Best value over every observation-contingent decision tree.

    Enumerates all N**(2**T - 1) trees explicitly (their values are built
    with outer sums) and takes the maximum.  Independent of the dynamic
    program in :class:`Planner`.
    """
    omega = tuple(float(w) for w in omega)
    n = len(omega)
    if n < 1 or horizon < 1:
        raise ValueError("need at least one channel and one slot")
    if not (n == 1 or (n <= 3 and horizon <= 3) or (n == 2 and horizon <= 4)):
        raise ValueError(
            f"brute force limited to N<=3 with T<=3, or N=2 with T<=4 (got N={n}, T={horizon})")
    eps = model.epsilon

    def n_trees(depth):
        return n ** (2 ** depth - 1)

    def all_values(w, depth):
        chunks = []
        for a in range(1, n + 1):
            p = w[a - 1] * (1.0 - eps)
            if depth == 1:
                chunks.append(np.array([p]))
                continue
            size = n_trees(depth - 1)
            ack = all_values(belief_update(w, a, ACK, model), depth - 1) if p > 0 else np.zeros(size)
            nak = all_values(belief_update(w, a, NAK, model), depth - 1) if p < 1 else np.zeros(size)
            chunks.append((p + p * ack[:, None] + (1.0 - p) * nak[None, :]).ravel())
        return np.concatenate(chunks)

    values = all_values(omega, horizon)
    assert values.size == n_trees(horizon)
    return float(values.max())


@dataclass
class TreeSolution:
    """Optimal and myopic values on every node reachable from one start belief.

    Level ``t`` (1-based, ``t < T``) holds canonical rows: beliefs sorted in
    decreasing order, so position 0 is always a myopic choice.  The terminal
    level is never materialized; its values are closed-form.
    """

    horizon: int
    beliefs: list[np.ndarray]
    children: list[np.ndarray]        # level t -> (M_t, N, 2) indices into level t+1
    q_optimal: list[np.ndarray]       # (M_t, N) value of sensing each sorted position
    q_myopic: list[np.ndarray]        # same, myopic afterwards
    myopic_reachable: list[np.ndarray]

    @property
    def value(self) -> float:
        return float(self.q_optimal[0][0].max())

    @property
    def myopic_value(self) -> float:
        return float(self.q_myopic[0][0, 0])

    @property
    def node_count(self) -> int:
        return sum(len(b) for b in self.beliefs)

    def level(self, t: int) -> int:
        return t - 1


def _canonical(rows: np.ndarray) -> np.ndarray:
    return -np.sort(-rows, axis=1)


def _child_rows(x: np.ndarray, model: ChannelModel):
    """ACK and NAK successors of every row for every sensed position, shape (M, N, 2, N)."""
    eps = model.epsilon
    g = x * model.p11 + (1.0 - x) * model.p01
    with np.errstate(divide="ignore", invalid="ignore"):
        post = eps * x / (eps * x + (1.0 - x))
    post = np.where(np.isfinite(post), post, 0.0)  # only on zero-probability NAK branches
    g_post = post * model.p11 + (1.0 - post) * model.p01
    m, n = x.shape
    out = np.repeat(g[:, None, None, :], 2, axis=2).repeat(n, axis=1)
    idx = np.arange(n)
    out[:, idx, 0, idx] = g_post
    out[:, idx, 1, idx] = model.p11
    return out  # [..., 0, :] is NAK, [..., 1, :] is ACK


def solve_tree(omega1: Sequence[float], horizon: int, model: ChannelModel,
               any_first_action: bool = False) -> TreeSolution:
    """Level-synchronous exact dynamic program over the reachable belief tree.

    ``any_first_action`` marks every slot-2 node as myopic-reachable, which is
    what matters when slot 1 is exempt from the comparison.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    eps = model.epsilon
    levels = [_canonical(np.asarray([omega1], dtype=float))]
    children = []
    for t in range(1, horizon - 1):
        x = levels[-1]
        m, n = x.shape
        cand = _canonical(_child_rows(x, model).reshape(-1, n))
        keys = np.round(cand, KEY_DIGITS)
        _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
        levels.append(cand[first])
        children.append(inverse.reshape(m, n, 2))

    n = levels[0].shape[1]
    q_opt: list = [None] * len(levels)
    q_my: list = [None] * len(levels)
    v_next = vm_next = None
    for li in range(len(levels) - 1, -1, -1):
        x = levels[li]
        p = x * (1.0 - eps)
        t = li + 1
        if t == horizon:
            q = p.copy()
            qm = p.copy()
        elif t == horizon - 1:
            kids = _child_rows(x, model).max(axis=3) * (1.0 - eps)  # (M, N, 2)
            cont = p * kids[:, :, 1] + np.where(p < 1.0, (1.0 - p) * kids[:, :, 0], 0.0)
            q = p + cont
            qm = q.copy()  # myopic is optimal in the last slot
        else:
            ch = children[li]
            nak = np.where(p < 1.0, (1.0 - p), 0.0)
            q = p + p * v_next[ch[:, :, 1]] + nak * v_next[ch[:, :, 0]]
            qm = p + p * vm_next[ch[:, :, 1]] + nak * vm_next[ch[:, :, 0]]
        q_opt[li] = q
        q_my[li] = qm
        v_next = q.max(axis=1)
        vm_next = qm[:, 0]

    reach = [np.ones(1, dtype=bool)]
    for li, ch in enumerate(children):
        nxt = np.zeros(len(levels[li + 1]), dtype=bool)
        sel = ch[reach[li]]
        if li == 0 and any_first_action:
            nxt[sel.ravel()] = True
        else:
            nxt[sel[:, 0, :].ravel()] = True
        reach.append(nxt)
    return TreeSolution(horizon, levels, children, q_opt, q_my, reach)
