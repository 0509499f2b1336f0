"""Named verification experiments over randomly generated instances.

Every instance is a pure function of ``(spec.seed, index)``, and reports are
serialized with sorted keys and no timing, so a re-run with the same spec
produces a byte-identical JSON report.  Wall time lives on the report object
and in the summary table only.
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .channel_model import ChannelModel, epsilon_bound, is_transient
from .planner import Planner, conditional_myopic_value, solve_tree
from .policy import (
    FixedPolicy,
    MyopicPolicy,
    StructuralPolicy,
    equivalent_actions,
    policy_from_name,
    structural_init,
    transient_slot2_action,
)
from .simulator import SimConfig, compile_policy, draw_all, simulate_rewards

PASS, FAIL, SKIPPED = "pass", "fail", "skipped"

ARGMAX_TOL = 1e-12
VALUE_TOL = 1e-9
BOUND_TOL = 1e-12

OMEGA_MODES = ("stationary", "random-in-band", "random-with-transients")


@dataclass
class InstanceSpec:
    n: Union[int, tuple[int, ...]] = 2
    horizon: int = 10
    instances: int = 100
    seed: int = 0
    model: Optional[ChannelModel] = None
    p_range: tuple[float, float] = (0.05, 0.95)
    min_gap: float = 0.01
    sign: str = "any"
    epsilon_frac: float = 0.5
    delta: float = 0.1
    omega: Union[str, tuple[float, ...]] = "random-in-band"
    episodes: int = 10_000
    policies: tuple[str, ...] = ("myopic-argmax", "fixed:1")

    def __post_init__(self):
        if isinstance(self.n, (list, tuple)):
            self.n = tuple(int(k) for k in self.n)
        lo, hi = self.p_range
        if not 0.0 < lo < hi < 1.0:
            raise ValueError("sampling range for p01, p11 must lie inside (0, 1)")
        if not 0.0 < self.epsilon_frac < 1.0 and self.model is None:
            raise ValueError("epsilon fraction must lie in (0, 1)")
        if self.sign not in ("any", "positive", "negative"):
            raise ValueError(f"unknown correlation sign {self.sign!r}")
        if isinstance(self.omega, str):
            if self.omega not in OMEGA_MODES:
                raise ValueError(f"unknown initial belief mode {self.omega!r}")
        else:
            self.omega = tuple(float(w) for w in self.omega)
        if self.instances < 1 or self.horizon < 1:
            raise ValueError("need at least one instance and one slot")

    @property
    def n_values(self) -> tuple[int, ...]:
        return self.n if isinstance(self.n, tuple) else (self.n,)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = None if self.model is None else self.model.to_dict()
        d["n"] = list(self.n_values) if isinstance(self.n, tuple) else self.n
        for k in ("p_range", "policies"):
            d[k] = list(d[k])
        if not isinstance(self.omega, str):
            d["omega"] = list(self.omega)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "InstanceSpec":
        data = dict(data)
        if data.get("model") is not None:
            data["model"] = ChannelModel.from_dict(data["model"])
        for k in ("p_range", "policies"):
            if k in data:
                data[k] = tuple(data[k])
        if isinstance(data.get("n"), list):
            data["n"] = tuple(data["n"])
        if isinstance(data.get("omega"), list):
            data["omega"] = tuple(data["omega"])
        return cls(**data)


@dataclass
class Instance:
    index: int
    n: int
    horizon: int
    model: ChannelModel
    omega1: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"index": self.index, "n": self.n, "horizon": self.horizon,
                "model": self.model.to_dict(), "omega1": list(self.omega1)}


def _sample_model(spec: InstanceSpec, rng: np.random.Generator) -> ChannelModel:
    lo, hi = spec.p_range
    while True:
        p01, p11 = rng.uniform(lo, hi, size=2)
        if abs(p11 - p01) <= spec.min_gap:
            continue
        if spec.sign == "positive" and p11 < p01:
            continue
        if spec.sign == "negative" and p11 >= p01:
            continue
        break
    bound = epsilon_bound(ChannelModel(p01, p11)).bound
    return ChannelModel(p01, p11, spec.epsilon_frac * bound, spec.delta)


def _sample_omega(spec: InstanceSpec, n: int, model: ChannelModel,
                  rng: np.random.Generator) -> tuple[float, ...]:
    if not isinstance(spec.omega, str):
        if len(spec.omega) != n:
            raise ValueError(f"explicit initial belief has {len(spec.omega)} entries, need {n}")
        return spec.omega
    if spec.omega == "stationary":
        return (model.stationary,) * n
    lo, hi = model.band
    if spec.omega == "random-in-band":
        return tuple(float(w) for w in rng.uniform(lo, hi, size=n))
    while True:
        omega = tuple(float(w) for w in rng.uniform(0.0, 1.0, size=n))
        if any(is_transient(w, model) for w in omega):
            return omega


def sample_instance(spec: InstanceSpec, index: int) -> Instance:
    rng = np.random.default_rng([spec.seed, index])
    n = int(rng.choice(spec.n_values))
    model = spec.model if spec.model is not None else _sample_model(spec, rng)
    return Instance(index, n, spec.horizon, model, _sample_omega(spec, n, model, rng))


@dataclass
class ExperimentReport:
    name: str
    spec: dict
    metadata: dict
    results: list[dict]
    wall_time: float = field(default=0.0, compare=False)

    def count(self, verdict: str) -> int:
        return sum(1 for r in self.results if r["verdict"] == verdict)

    @property
    def pass_rate(self) -> Optional[float]:
        decided = self.count(PASS) + self.count(FAIL)
        return None if decided == 0 else self.count(PASS) / decided

    @property
    def ok(self) -> bool:
        return self.count(FAIL) == 0

    def failures(self) -> list[dict]:
        return [r for r in self.results if r["verdict"] == FAIL]

    def to_dict(self) -> dict:
        return {
            "experiment": self.name,
            "spec": self.spec,
            "metadata": self.metadata,
            "summary": {"pass": self.count(PASS), "fail": self.count(FAIL),
                        "skipped": self.count(SKIPPED), "pass_rate": self.pass_rate},
            "results": self.results,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def summary_line(self) -> str:
        rate = "n/a" if self.pass_rate is None else f"{100 * self.pass_rate:.1f}%"
        return (f"{self.name:<12} pass={self.count(PASS):<5} fail={self.count(FAIL):<5} "
                f"skipped={self.count(SKIPPED):<5} rate={rate:<7} time={self.wall_time:.1f}s")

    def to_csv(self) -> str:
        lines = ["index,n,horizon,p01,p11,epsilon,delta,verdict"]
        for r in self.results:
            inst = r["instance"]
            m = inst["model"]
            lines.append(f"{inst['index']},{inst['n']},{inst['horizon']},{m['p01']!r},{m['p11']!r},"
                         f"{m['epsilon']!r},{m['delta']!r},{r['verdict']}")
        return "\n".join(lines) + "\n"


def _bound_skip(inst: Instance) -> Optional[dict]:
    b = epsilon_bound(inst.model)
    if not b.satisfied:
        return {"verdict": SKIPPED, "details": {
            "reason": f"epsilon {inst.model.epsilon!r} not below bound {b.bound!r}"}}
    return None


def check_structure(inst: Instance, spec: InstanceSpec) -> dict:
    """Round-robin actions against belief argmax on every observation path."""
    skip = _bound_skip(inst)
    if skip:
        return skip
    rep = equivalent_actions(StructuralPolicy(), MyopicPolicy(), inst.omega1, inst.model,
                             inst.horizon, tol=ARGMAX_TOL)
    transient = any(is_transient(w, inst.model) for w in inst.omega1)
    details = rep.to_dict()
    details.pop("first_divergence")
    details["transient_start"] = transient
    if transient and inst.n > 1:
        state = structural_init(inst.omega1, inst.model)
        details["nak_rank"] = state.rank
        if state.rank is not None:
            action, order = transient_slot2_action(state.rank, inst.model.sign, inst.n)
            labels = state.initial_ranking
            details["slot2_action_after_nak"] = labels[action - 1]
            details["corrected_order"] = [labels[k - 1] for k in order]
    out = {"verdict": PASS if rep.agree else FAIL, "details": details}
    if not rep.agree:
        out["witness"] = rep.first_divergence.to_dict()
    return out


def check_optimality(inst: Instance, spec: InstanceSpec) -> dict:
    """Myopic value equals the optimum and the myopic action is optimal at each visited node.

    With a transient start slot 1 is exempt: every slot-2 node reachable by
    any first action is checked instead.
    """
    skip = _bound_skip(inst)
    if skip:
        return skip
    model, T = inst.model, inst.horizon
    transient = any(is_transient(w, model) for w in inst.omega1)
    sol = solve_tree(inst.omega1, T, model, any_first_action=transient)
    first_level = 1 if transient else 0
    checked = 0
    witness = None
    worst_value_gap = 0.0
    for li in range(first_level, len(sol.beliefs)):
        q, qm = sol.q_optimal[li], sol.q_myopic[li]
        reach = sol.myopic_reachable[li]
        best = q.max(axis=1)
        checked += int(reach.sum())
        bad = reach & (q[:, 0] < best - ARGMAX_TOL)
        value_gap = np.abs(qm[:, 0] - best)[reach]
        if value_gap.size:
            worst_value_gap = max(worst_value_gap, float(value_gap.max()))
        if witness is None and bad.any():
            m = int(np.flatnonzero(bad)[0])
            witness = {"slot": li + 1, "beliefs": sol.beliefs[li][m].tolist(),
                       "action_values": q[m].tolist(), "note": "beliefs sorted decreasingly"}
    planner = Planner(model, T)
    myopic = planner.policy_value(MyopicPolicy(), inst.omega1)
    details = {"optimal_value": sol.value, "myopic_value": myopic,
               "myopic_value_tree": sol.myopic_value, "nodes": sol.node_count,
               "myopic_nodes_checked": checked, "max_value_gap_on_myopic_path": worst_value_gap,
               "transient_start": transient}
    ok = witness is None and worst_value_gap <= VALUE_TOL
    if not transient:
        ok = ok and abs(myopic - sol.value) <= VALUE_TOL
    out = {"verdict": PASS if ok else FAIL, "details": details}
    if not ok:
        out["witness"] = witness or {"value_difference": myopic - sol.value}
    return out


def check_lemma4(inst: Instance, spec: InstanceSpec) -> dict:
    """Conditional myopic values: bounded difference and channel-swap symmetry."""
    if inst.n != 2:
        return {"verdict": SKIPPED, "details": {"reason": "two channels only"}}
    skip = _bound_skip(inst)
    if skip:
        return skip
    model, T = inst.model, inst.horizon
    limit = 1.0 - model.epsilon
    states = [(0, 0), (0, 1), (1, 0), (1, 1)]
    worst_ratio = 0.0
    worst_sym = 0.0
    witness = None
    for t in range(1, T + 2):
        v = {(a, s): conditional_myopic_value(a, s, t, T, model).value
             for a in (1, 2) for s in states}
        for a in (1, 2):
            diff = abs(v[(a, (1, 0))] - v[(a, (0, 1))])
            worst_ratio = max(worst_ratio, diff / limit if limit > 0 else 0.0)
            if diff > limit + BOUND_TOL and witness is None:
                witness = {"slot": t, "prev_action": a, "difference": diff, "limit": limit}
        for s in states:
            sym = abs(v[(1, s)] - v[(2, s[::-1])])
            worst_sym = max(worst_sym, sym)
            if sym > BOUND_TOL and witness is None:
                witness = {"slot": t, "state": list(s), "asymmetry": sym}
    out = {"verdict": PASS if witness is None else FAIL,
           "details": {"max_difference_over_limit": worst_ratio, "max_asymmetry": worst_sym}}
    if witness:
        out["witness"] = witness
    return out


def check_lemma1(inst: Instance, spec: InstanceSpec) -> dict:
    """Deviating from the myopic action for one slot never helps, at any reachable node."""
    skip = _bound_skip(inst)
    if skip:
        return skip
    sol = solve_tree(inst.omega1, inst.horizon, inst.model)
    worst = np.inf
    witness = None
    for li, qm in enumerate(sol.q_myopic):
        gaps = qm[:, :1] - qm
        lo = float(gaps.min())
        worst = min(worst, lo)
        if lo < -ARGMAX_TOL and witness is None:
            m, a = np.unravel_index(int(gaps.argmin()), gaps.shape)
            witness = {"slot": li + 1, "beliefs": sol.beliefs[li][m].tolist(),
                       "position": int(a) + 1, "gap": float(gaps[m, a])}
    out = {"verdict": PASS if witness is None else FAIL,
           "details": {"min_gap": worst, "nodes": sol.node_count}}
    if witness:
        out["witness"] = witness
    return out


def check_montecarlo(inst: Instance, spec: InstanceSpec) -> dict:
    """Simulated mean total reward within three standard errors of the exact value."""
    model, T = inst.model, inst.horizon
    cfg = SimConfig(model, inst.n, T, episodes=spec.episodes, seed=spec.seed * 1_000_003 + inst.index,
                    omega1=inst.omega1)
    draws = draw_all(cfg)
    planner = Planner(model, T)
    per_policy = {}
    ok = True
    names = list(spec.policies)
    structural_ok = epsilon_bound(model).satisfied
    if structural_ok and "structural" not in names:
        names.append("structural")
    totals_by_name = {}
    for name in names:
        policy = policy_from_name(name, seed=spec.seed)
        totals = simulate_rewards(cfg, policy, draws)
        totals_by_name[name] = totals
        mean = float(totals.mean())
        se = float(totals.std(ddof=1) / np.sqrt(len(totals)))
        exact = planner.policy_value(policy, inst.omega1)
        within = abs(mean - exact) <= 3.0 * se
        entry = {"mean": mean, "se": se, "exact": exact, "within_3se": within}
        if isinstance(policy, FixedPolicy) and spec.omega == "stationary":
            entry["closed_form"] = model.stationary * (1.0 - model.epsilon) * T
        per_policy[name] = entry
        ok = ok and within
    details = {"policies": per_policy, "episodes": spec.episodes, "sim_seed": cfg.seed}
    if structural_ok:
        same_table = bool(np.array_equal(
            compile_policy(StructuralPolicy(), inst.omega1, model, T),
            compile_policy(MyopicPolicy(), inst.omega1, model, T)))
        myopic_totals = totals_by_name.get("myopic-argmax")
        if myopic_totals is None:
            myopic_totals = simulate_rewards(cfg, MyopicPolicy(), draws)
        same = same_table and bool(np.array_equal(totals_by_name["structural"], myopic_totals))
        details["structural_matches_argmax"] = same
        ok = ok and same
    out = {"verdict": PASS if ok else FAIL, "details": details}
    if not ok:
        out["witness"] = {"policies": per_policy}
    return out


CHECKS: dict[str, Callable[[Instance, InstanceSpec], dict]] = {
    "structure": check_structure,
    "optimality": check_optimality,
    "conjecture": check_optimality,
    "lemma4": check_lemma4,
    "lemma1": check_lemma1,
    "montecarlo": check_montecarlo,
}

DEFAULTS = {
    "structure": dict(n=(2, 3, 4, 5, 6), horizon=12, instances=500),
    "optimality": dict(n=2, horizon=10, instances=200),
    "conjecture": dict(n=(3, 4, 5), horizon=8, instances=100),
    "lemma4": dict(n=2, horizon=15, instances=200),
    "lemma1": dict(n=2, horizon=10, instances=100),
    "montecarlo": dict(n=2, horizon=6, instances=10, omega="stationary"),
}

METADATA = {
    "sampling": "p01, p11 uniform on p_range, resampled until |p11 - p01| > min_gap; "
                "epsilon = epsilon_frac * bound unless a model is given",
    "argmax_tie_tolerance": ARGMAX_TOL,
    "value_tolerance": VALUE_TOL,
    "bound_tolerance": BOUND_TOL,
    "belief_key_digits": 12,
    "channel_indexing": "1-based",
    "simulator_initial_distribution": "Bernoulli(omega1) per channel; stationary when omega=stationary",
    "defaults_are_declared_choices": True,
}


def run_instance(name: str, spec: InstanceSpec, index: int) -> dict:
    inst = sample_instance(spec, index)
    result = CHECKS[name](inst, spec)
    result = {"index": index, "instance": inst.to_dict(), **result}
    if result["verdict"] == FAIL:
        result["witness"] = {"experiment": name, "seed": spec.seed, "index": index,
                             **result.get("witness", {})}
    return result


def _run_instance_args(args):
    return run_instance(*args)


def run_experiment(name: str, spec: InstanceSpec, jobs: int = 1) -> ExperimentReport:
    if name not in CHECKS:
        raise ValueError(f"unknown experiment {name!r}")
    if name == "optimality" and spec.n_values != (2,):
        raise ValueError("the optimality experiment is for two channels")
    start = time.perf_counter()
    tasks = [(name, spec, i) for i in range(spec.instances)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_instance_args, tasks, chunksize=8))
    else:
        results = [run_instance(*t) for t in tasks]
    results.sort(key=lambda r: r["index"])
    report = ExperimentReport(name, spec.to_dict(), dict(METADATA), results)
    report.wall_time = time.perf_counter() - start
    return report


def experiment_structure(spec: InstanceSpec, jobs: int = 1) -> ExperimentReport:
    return run_experiment("structure", spec, jobs)


def experiment_optimality(spec: InstanceSpec, jobs: int = 1) -> ExperimentReport:
    return run_experiment("optimality", spec, jobs)


def experiment_conjecture(spec: InstanceSpec, jobs: int = 1) -> ExperimentReport:
    return run_experiment("conjecture", spec, jobs)


def experiment_lemma4(spec: InstanceSpec, jobs: int = 1) -> ExperimentReport:
    return run_experiment("lemma4", spec, jobs)


def experiment_lemma1(spec: InstanceSpec, jobs: int = 1) -> ExperimentReport:
    return run_experiment("lemma1", spec, jobs)


def experiment_montecarlo(spec: InstanceSpec, jobs: int = 1) -> ExperimentReport:
    return run_experiment("montecarlo", spec, jobs)


def replay(report: dict, index: Optional[int] = None) -> list[tuple[int, str, str]]:
    """Re-run instances of a stored report; returns (index, stored, replayed) verdicts."""
    name = report["experiment"]
    spec = InstanceSpec.from_dict(report["spec"])
    if index is None:
        indices = [r["index"] for r in report["results"] if r["verdict"] == FAIL]
    else:
        indices = [index]
    stored = {r["index"]: r["verdict"] for r in report["results"]}
    return [(i, stored.get(i, "?"), run_instance(name, spec, i)["verdict"]) for i in indices]
