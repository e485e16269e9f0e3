"""Tabular Q-learning bidder for sequential second-price permit auctions.

The state is the pair of permit holdings, the action a bid from a fixed
grid, and the declared valuation is the bid on the "I win" joint action.
Rewards are recomputed from what the agent sees (winner, the winner's
marginal value and the price) according to one of three variants:

* ``r1``: the winner's profit to the winner, 0 to the loser;
* ``r2``: the winner's profit to both agents;
* ``r3``: the winner's profit to the winner, its negation to the loser.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..envcore import AgentPolicy
from ..errors import ConfigurationError
from ..mechanisms import ValuationTable

VARIANTS = ("r1", "r2", "r3")
TIE_TOL = 1e-12


def bid_grid(step=50_000.0, bid_max=8_400_000.0):
    """``{0, step, ..., bid_max}``; the defaults give 169 bids."""
    n = int(round(bid_max / step))
    if n < 0 or abs(n * step - bid_max) > 1e-6 * step:
        raise ConfigurationError("bid_max must be a non-negative multiple of bid_step")
    return np.arange(n + 1) * float(step)


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear annealing from ``start`` to ``end`` over ``episodes`` episodes, then flat."""

    start: float = 1.0
    end: float = 0.0
    episodes: int = 1

    def __call__(self, episode):
        if episode >= self.episodes:
            return self.end
        return self.start + (self.end - self.start) * episode / max(self.episodes, 1)

    @classmethod
    def from_config(cls, cfg, episodes):
        if cfg is None:
            return cls(1.0, 0.0, max(int(0.8 * episodes), 1))
        if isinstance(cfg, dict):
            frac = cfg.get("fraction")
            n = int(cfg["episodes"]) if "episodes" in cfg else int((0.8 if frac is None else frac) * episodes)
            return cls(float(cfg.get("start", 1.0)), float(cfg.get("end", 0.0)), max(n, 1))
        start, end, frac = cfg
        return cls(float(start), float(end), max(int(frac * episodes), 1))


def holdings_states(cap, tranche, k=2):
    """All holdings vectors reachable by selling whole tranches, ordered by total then lexicographically."""
    n = cap // tranche

    def rec(prefix, left):
        if len(prefix) == k:
            yield tuple(x * tranche for x in prefix)
            return
        for c in range(left + 1):
            yield from rec(prefix + (c,), left - c)

    return sorted(rec((), n), key=lambda s: (sum(s), s))


def variant_reward(variant, i, winner, profit):
    if variant == "r1":
        return profit if i == winner else 0.0
    if variant == "r2":
        return profit
    if variant == "r3":
        return profit if i == winner else -profit
    raise ConfigurationError(f"unknown reward variant {variant!r}; expected one of {VARIANTS}")


class QLearningBidder(AgentPolicy):
    """Epsilon-greedy tabular Q-learner over holdings states and a bid grid.

    ``Q`` persists across protocol runs: each ``reset`` starts a new
    episode and advances the exploration schedule. Greedy ties are broken
    uniformly with the run's generator.
    """

    def __init__(self, bids=None, alpha=0.1, gamma=1.0, epsilon=None, variant="r1", cap=15_000,
                 tranche=3_000, k=2, episodes=1):
        if variant not in VARIANTS:
            raise ConfigurationError(f"unknown reward variant {variant!r}; expected one of {VARIANTS}")
        if k != 2:
            raise ConfigurationError("the Q-learning bidder models two-refinery auctions")
        if cap % tranche:
            raise ConfigurationError("permit cap must be a multiple of the tranche size")
        self.bids = bid_grid() if bids is None else np.asarray(bids, dtype=float)
        self.alpha, self.gamma = float(alpha), float(gamma)
        self.epsilon = epsilon if epsilon is not None else EpsilonSchedule(1.0, 0.0, max(int(0.8 * episodes), 1))
        self.variant = variant
        self.cap, self.tranche, self.k = int(cap), int(tranche), int(k)
        self.states = holdings_states(self.cap, self.tranche, self.k)
        self.state_index = {s: n for n, s in enumerate(self.states)}
        self.Q = np.zeros((len(self.states), len(self.bids)))
        self.visits = np.zeros(len(self.states), dtype=np.int64)
        self.episode = -1
        self.learning = True
        self._pending = None

    # -- core (shared by the protocol path and the fast experiment loop) --

    def is_terminal(self, s):
        return sum(self.states[s]) >= self.cap

    def current_epsilon(self):
        return self.epsilon(max(self.episode, 0)) if self.learning else 0.0

    def choose(self, s, rng):
        """Index of the bid to play in state ``s``."""
        if self.learning and rng.random() < self.current_epsilon():
            return int(rng.integers(len(self.bids)))
        row = self.Q[s]
        ties = np.flatnonzero(row >= row.max() - TIE_TOL)
        if ties.size == 1:
            return int(ties[0])
        return int(ties[rng.integers(ties.size)])

    def learn(self, s, a, r, s_next):
        self.visits[s] += 1
        if not self.learning:
            return
        target = r if self.is_terminal(s_next) else r + self.gamma * self.Q[s_next].max()
        self.Q[s, a] += self.alpha * (target - self.Q[s, a])

    def next_state(self, s, winner):
        g = list(self.states[s])
        g[winner] += self.tranche
        return self.state_index[tuple(g)]

    # -- protocol interface ------------------------------------------------

    def start_episode(self):
        self.episode += 1
        self._pending = None

    def reset(self, index, env, rng, visibility="own"):
        super().reset(index, env, rng, visibility)
        self.start_episode()

    def holdings_from(self, history):
        g = [0] * self.k
        for a, _ in history:
            g[a.index(1)] += self.tranche
        return tuple(g)

    def declare(self, t, history) -> ValuationTable:
        s = self.state_index[self.holdings_from(history)]
        a = self.choose(s, self.rng) if not self.is_terminal(s) else 0
        self._pending = (s, a)
        return ValuationTable.point(self.env.alt, self.env.alt[self.index], float(self.bids[a]))

    def observe(self, view) -> None:
        s, a = self._pending
        if self.is_terminal(s):
            return
        winner = tuple(view.chosen_action).index(1)
        (obs, reward), = view.percept
        rho_w = float(obs[1])
        if winner == self.index:
            price = float(view.payment)
        elif view.payments is not None:
            price = float(view.payments[winner])
        else:
            price = float(self.bids[a])  # two bidders: the winner pays the loser's bid
        r = variant_reward(self.variant, self.index, winner, rho_w - price)
        self.learn(s, a, r, self.next_state(s, winner))

    # -- inspection ------------------------------------------------------

    def policy_matrix(self):
        """``{(g1, g2): greedy bid}`` for visited non-terminal states (first maximiser)."""
        return {st: float(self.bids[int(np.argmax(self.Q[n]))])
                for n, st in enumerate(self.states) if self.visits[n] and not self.is_terminal(n)}

    def value_matrix(self):
        return {st: float(self.Q[n].max()) for n, st in enumerate(self.states) if self.visits[n]}

    def to_json(self):
        return {
            "variant": self.variant, "alpha": self.alpha, "gamma": self.gamma, "episodes_seen": self.episode + 1,
            "bids": self.bids.tolist(),
            "states": [list(s) for s in self.states],
            "visits": self.visits.tolist(),
            "q": self.Q.tolist(),
        }

    def dumps(self):
        return json.dumps(self.to_json())


def qlearn_policy(grid=None, alpha=0.1, gamma=1.0, epsilon=None, reward_variant="r1", **kw) -> QLearningBidder:
    return QLearningBidder(grid, alpha, gamma, epsilon, reward_variant, **kw)
