"""VCG on a known episodic MDP: efficient policy, remove-one-agent policies and pivot prices.

Rewards are dense arrays ``r[i][h, s, a]`` for the controller (``i = 0``)
and agents ``1..k``; transitions are ``P[h, s, a, s']``. Steps are 0-based
internally, so ``V[0]`` is the value from the initial state at step 1.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError
from .oracle.verify import VerificationReport
from .validation import check_stochastic_rows

TIE_TOL = 1e-12


@dataclass
class EpisodicMDP:
    states: list
    actions: list
    H: int
    P: np.ndarray
    rewards: np.ndarray
    x1: int = 0

    def __post_init__(self):
        self.P = check_stochastic_rows("transitions", np.asarray(self.P, dtype=float))
        self.rewards = np.asarray(self.rewards, dtype=float)
        S, A, H = len(self.states), len(self.actions), int(self.H)
        if self.P.shape != (H, S, A, S):
            raise DomainError(f"transitions must have shape {(H, S, A, S)}, got {self.P.shape}")
        if self.rewards.ndim != 4 or self.rewards.shape[1:] != (H, S, A):
            raise DomainError(f"rewards must have shape (k+1, {H}, {S}, {A}), got {self.rewards.shape}")
        if np.any(self.rewards < -1e-12) or np.any(self.rewards > 1 + 1e-12):
            raise DomainError("rewards must lie in [0, 1]")
        if not 0 <= int(self.x1) < S:
            raise DomainError("initial state out of range")

    @property
    def k(self):
        return self.rewards.shape[0] - 1

    def with_rewards(self, rewards):
        return EpisodicMDP(self.states, self.actions, self.H, self.P, rewards, self.x1)

    # -- JSON ------------------------------------------------------------

    def to_dict(self):
        return {"states": list(self.states), "actions": list(self.actions), "H": int(self.H),
                "x1": self.states[self.x1], "transitions": self.P.tolist(), "rewards": self.rewards.tolist()}

    @classmethod
    def from_dict(cls, d):
        try:
            states, actions = list(d["states"]), list(d["actions"])
            x1 = d.get("x1", states[0])
            x1 = states.index(x1) if x1 in states else int(x1)
            return cls(states, actions, int(d["H"]), np.array(d["transitions"], dtype=float),
                       np.array(d["rewards"], dtype=float), x1)
        except (KeyError, ValueError, TypeError) as e:
            raise ConfigurationError(f"bad MDP description: {e}") from None

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def value_iteration(mdp: EpisodicMDP, reward):
    """Optimal step-indexed policy ``pi[h, s]`` and values ``V[h, s]`` (``V[H] = 0``); lowest action wins ties."""
    reward = np.asarray(reward, dtype=float)
    H, S = mdp.H, len(mdp.states)
    V = np.zeros((H + 1, S))
    pi = np.zeros((H, S), dtype=int)
    for h in range(H - 1, -1, -1):
        Q = reward[h] + mdp.P[h] @ V[h + 1]
        pi[h] = np.argmax(Q >= Q.max(axis=1, keepdims=True) - TIE_TOL, axis=1)
        V[h] = Q[np.arange(S), pi[h]]
    return pi, V


def policy_value(mdp: EpisodicMDP, policy, reward, state=None):
    """``V_1^pi(x; reward)`` by exact backward evaluation."""
    reward = np.asarray(reward, dtype=float)
    S = len(mdp.states)
    V = np.zeros(S)
    for h in range(mdp.H - 1, -1, -1):
        a = np.asarray(policy[h])
        V = reward[h][np.arange(S), a] + (mdp.P[h][np.arange(S), a] @ V)
    return float(V[mdp.x1 if state is None else state])


def brute_force_optimum(mdp: EpisodicMDP, reward):
    """Best value over every deterministic step-indexed policy (small instances only)."""
    H, S, A = mdp.H, len(mdp.states), len(mdp.actions)
    if A ** (H * S) > 200_000:
        raise ConfigurationError("instance too large for policy enumeration")
    best = -np.inf
    for flat in itertools.product(range(A), repeat=H * S):
        best = max(best, policy_value(mdp, np.array(flat).reshape(H, S), reward))
    return best


@dataclass
class MarkovVCGResult:
    pi_star: np.ndarray
    pi_minus: list
    values: dict
    prices: np.ndarray


def markov_vcg(mdp: EpisodicMDP, reports=None) -> MarkovVCGResult:
    """Efficient policy for ``R = r_0 + sum_i r_i`` and prices ``V(pi_-i; R^-i) - V(pi*; R^-i)``.

    ``reports`` optionally replaces agents' reward tables (shape ``(k, H, S, A)``);
    the controller's ``r_0`` is always the true one.
    """
    r = mdp.rewards.copy()
    if reports is not None:
        reports = np.asarray(reports, dtype=float)
        if reports.shape != r[1:].shape:
            raise DomainError(f"reports must have shape {r[1:].shape}")
        r[1:] = reports
    R = r.sum(axis=0)
    pi_star, V = value_iteration(mdp, R)
    values = {"R": float(V[0, mdp.x1])}
    pi_minus, prices = [], np.zeros(mdp.k)
    for i in range(1, mdp.k + 1):
        R_minus = R - r[i]
        pi_i, V_i = value_iteration(mdp, R_minus)
        pi_minus.append(pi_i)
        best = float(V_i[0, mdp.x1])
        at_star = policy_value(mdp, pi_star, R_minus)
        values[f"R-{i}"] = best
        values[f"R-{i}@pi*"] = at_star
        prices[i - 1] = best - at_star
    return MarkovVCGResult(pi_star, pi_minus, values, prices)


def agent_utility(mdp: EpisodicMDP, result: MarkovVCGResult, i):
    """True value of agent ``i`` (1-based) under the chosen policy, minus its price."""
    return policy_value(mdp, result.pi_star, mdp.rewards[i]) - float(result.prices[i - 1])


def sample_reward_misreports(truth, count, rng):
    """Structured (zero, full, inflated entries, scaled) and uniform random reward tables in [0, 1]."""
    rows = [np.zeros_like(truth), np.ones_like(truth), np.clip(truth * 0.5, 0, 1), np.clip(truth * 2, 0, 1),
            1.0 - truth]
    flat = truth.reshape(-1)
    for j in range(min(flat.size, count)):
        r = flat.copy()
        r[j] = 1.0
        rows.append(r.reshape(truth.shape))
    rows = rows[:count]
    while len(rows) < count:
        rows.append(rng.uniform(0, 1, size=truth.shape))
    return rows


def check_markov_ic_ir(mdp: EpisodicMDP, misreports=100, seed=0, tol=1e-9) -> VerificationReport:
    """Truthful utility must beat every sampled reward misreport and be non-negative."""
    rng = np.random.default_rng(seed)
    report = VerificationReport("markov-ic-ir")
    truthful = markov_vcg(mdp)
    for i in range(1, mdp.k + 1):
        u_true = agent_utility(mdp, truthful, i)
        report.checked += 1
        if u_true < -tol:
            report.add({"agent": i, "kind": "ir", "utility": u_true})
        for m in sample_reward_misreports(mdp.rewards[i], misreports, rng):
            reps = mdp.rewards[1:].copy()
            reps[i - 1] = m
            res = markov_vcg(mdp, reps)
            u_lie = agent_utility(mdp, res, i)
            report.checked += 1
            if u_lie > u_true + tol:
                report.add({"agent": i, "kind": "ic", "truthful": u_true, "misreport": u_lie})
    return report


def random_mdp(n_states=3, n_actions=2, H=3, k=2, seed=0, zero_controller=False) -> EpisodicMDP:
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(H, n_states, n_actions))
    rewards = rng.uniform(0, 1, size=(k + 1, H, n_states, n_actions))
    if zero_controller:
        rewards[0] = 0.0
    return EpisodicMDP([f"s{j}" for j in range(n_states)], [f"a{j}" for j in range(n_actions)], H, P, rewards, 0)


def one_step_mdp(valuations, controller=None) -> EpisodicMDP:
    """``H = 1`` single-state MDP whose actions are the alternatives and ``r_i`` agent i's values."""
    V = np.asarray(valuations, dtype=float)
    k, A = V.shape
    r0 = np.zeros(A) if controller is None else np.asarray(controller, dtype=float)
    rewards = np.vstack([r0[None], V]).reshape(k + 1, 1, 1, A)
    return EpisodicMDP(["x"], list(range(A)), 1, np.ones((1, 1, A, 1)), rewards, 0)
