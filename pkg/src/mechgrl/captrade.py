"""Refinery emission curves, permit auctions and the Q-learning bidding experiment.

Production ``y`` is in millions of litres per day, emissions in cubic tons
per day and money in dollars. A refinery with inefficiency ``m`` emits
``m (y^3/5 - 12 y^2 + 200 y + 888)`` and earns ``margin`` dollars per litre.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .actions import JointActionSet
from .agents.qlearn import EpsilonSchedule, QLearningBidder, bid_grid
from .envcore import EnvModel, make_rng
from .errors import ConfigurationError, DomainError
from .validation import check_seed

# emission curve per unit m: turning points of y^3/5 - 12 y^2 + 200 y + 888
Y_LOCAL_MAX = (24.0 - np.sqrt(96.0)) / 1.2
Y_LOCAL_MIN = (24.0 + np.sqrt(96.0)) / 1.2
LEDGER_COLUMNS = ("t", "agent", "prod", "perm", "prof", "rho", "bid", "win", "+prof")


@dataclass
class Refinery:
    m: float = 1.0
    capacity: float = 100.0
    margin: float = 0.20
    holdings: int = 0

    def __post_init__(self):
        if not self.m >= 1:
            raise DomainError("inefficiency factor m must be at least 1")
        if self.holdings < 0 or int(self.holdings) != self.holdings:
            raise DomainError("permit holdings must be a non-negative integer")

    @property
    def value_per_unit(self):
        """Dollars earned per million litres."""
        return self.margin * 1e6

    def production(self, permits=None):
        return inv_emissions(self.m, self.holdings if permits is None else permits, self.capacity)

    def profit(self, permits=None):
        return self.value_per_unit * self.production(permits)


def emissions(m, y):
    """Cubic tons per day emitted when producing ``y`` million litres."""
    y = np.asarray(y, dtype=float)
    out = m * (y ** 3 / 5.0 - 12.0 * y ** 2 + 200.0 * y + 888.0)
    return float(out) if out.ndim == 0 else out


def _newton(m, g, y):
    d = m * (0.6 * y * y - 24.0 * y + 200.0)
    if d != 0:
        y = y - (emissions(m, y) - g) / d
    return y


def inv_emissions(m, g, capacity=100.0):
    """Largest production whose emissions equal ``g``: max real root of the cubic (and 0), clamped to capacity.

    Roots come from the companion matrix, get one Newton step, and are
    replaced by a bracketing root finder on a monotone branch if they look off.
    """
    if g < 0:
        raise DomainError("permits must be non-negative")
    roots = np.roots([m / 5.0, -12.0 * m, 200.0 * m, 888.0 * m - g])
    cands = [0.0]
    for r in roots:
        if abs(r.imag) <= 1e-6 * (1.0 + abs(r.real)):
            cands.append(_newton(m, g, float(r.real)))
    y = max(cands)
    scale = max(float(g), 1.0)
    upper = g >= emissions(m, Y_LOCAL_MIN)
    if y > 0 and (abs(emissions(m, y) - g) > 1e-9 * scale or (upper and y < Y_LOCAL_MIN)):
        if upper:
            hi = Y_LOCAL_MIN + 1.0
            while emissions(m, hi) < g:
                hi *= 2.0
            y = brentq(lambda v: emissions(m, v) - g, Y_LOCAL_MIN, hi, xtol=1e-13)
        else:
            y = brentq(lambda v: emissions(m, v) - g, -100.0, Y_LOCAL_MAX, xtol=1e-13)
    return float(min(max(y, 0.0), capacity))


def greedy_bid(refinery: Refinery, tranche_size=3000):
    """Marginal production value of one more tranche at current holdings."""
    g = refinery.holdings
    dy = refinery.production(g + tranche_size) - refinery.production(g)
    return refinery.value_per_unit * dy


@dataclass
class AuctionLedger:
    """Rows ``(t, agent, prod, perm, prof, rho, bid, win, +prof)``: state before the tranche, then its outcome."""

    rows: list
    payments: list
    winners: list
    refineries: list = field(repr=False, default_factory=list)

    def totals(self):
        k = len(self.refineries)
        perms = [r.holdings for r in self.refineries]
        paid = [0.0] * k
        for w, p in zip(self.winners, self.payments):
            paid[w] += p
        prod = [r.production() for r in self.refineries]
        profit = [r.value_per_unit * y - c for r, y, c in zip(self.refineries, prod, paid)]
        return {"permits": perms, "paid": paid, "production": prod, "profit": profit,
                "collected": float(sum(self.payments))}

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LEDGER_COLUMNS)
        for row in self.rows:
            w.writerow([row[c] for c in LEDGER_COLUMNS])
        return buf.getvalue()


def _second_price(bids, rng):
    bids = np.asarray(bids, dtype=float)
    top = np.flatnonzero(bids >= bids.max() - 1e-12)
    w = int(top[rng.integers(top.size)]) if (rng is not None and top.size > 1) else int(top[0])
    others = np.delete(bids, w)
    return w, (float(others.max()) if others.size else 0.0)


def run_greedy_auction(refineries, total_cap=15000, tranche=3000, rng=None) -> AuctionLedger:
    """Sequential second-price tranches with every refinery bidding its marginal value.

    Equal top bids go to a uniformly random winner when ``rng`` is given,
    otherwise to the lowest index. A lone bidder pays 0.
    """
    if tranche <= 0 or total_cap % tranche:
        raise ConfigurationError("permit cap must be a positive multiple of the tranche size")
    refs = [Refinery(r.m, r.capacity, r.margin, r.holdings) for r in refineries]
    rows, pays, winners = [], [], []
    for t in range(1, total_cap // tranche + 1):
        bids = [greedy_bid(r, tranche) for r in refs]
        w, pay = _second_price(bids, rng)
        for i, r in enumerate(refs):
            rows.append({"t": t, "agent": i + 1, "prod": r.production(), "perm": r.holdings,
                         "prof": r.profit(), "rho": bids[i], "bid": bids[i], "win": int(i == w),
                         "+prof": bids[i] - pay if i == w else 0.0})
        refs[w].holdings += tranche
        pays.append(pay)
        winners.append(w)
    return AuctionLedger(rows, pays, winners, refs)


def fixed_price_optimum(m, price_per_ton=190.0, capacity=100.0, margin=0.20):
    """Production maximising ``value * y - price * emissions(m, y)`` on ``[0, capacity]``; returns ``(y*, profit)``."""
    value = margin * 1e6

    def net(y):
        return value * y - price_per_ton * emissions(m, y)

    # n'(y) = value - price * m * (0.6 y^2 - 24 y + 200)
    cands = [0.0, float(capacity)]
    if price_per_ton > 0:
        for r in np.roots([-0.6 * price_per_ton * m, 24.0 * price_per_ton * m, value - 200.0 * price_per_ton * m]):
            if abs(r.imag) < 1e-9 and 0 <= r.real <= capacity:
                cands.append(float(r.real))
    y = max(cands, key=lambda v: (net(v), -v))
    return y, float(net(y))


# -- protocol environment ---------------------------------------------------


class CapTradeEnv(EnvModel):
    """Permit tranches as a protocol environment; the joint action names the tranche winner.

    Every agent observes ``(winner, winner's marginal value)``; the winner's
    reward is its marginal production value (the payment is charged by the
    mechanism). After the cap is sold percepts are all zero.
    """

    name = "captrade"

    def __init__(self, refineries=None, permit_cap=15000, tranche=3000):
        refs = refineries if refineries is not None else [Refinery(1.0), Refinery(2.0)]
        self.refineries = [Refinery(r.m, r.capacity, r.margin, 0) for r in refs]
        if tranche <= 0 or permit_cap % tranche:
            raise ConfigurationError("permit cap must be a positive multiple of the tranche size")
        super().__init__(JointActionSet.exclusive(len(self.refineries)))
        self.permit_cap, self.tranche = int(permit_cap), int(tranche)
        self.n_tranches = self.permit_cap // self.tranche
        n = self.n_tranches
        self.rho = np.array([[r.value_per_unit * (r.production((c + 1) * tranche) - r.production(c * tranche))
                              for c in range(n + 1)] for r in self.refineries])

    def holdings(self, h):
        g = [0] * self.k
        for a, _ in h:
            g[a.index(1)] += 1
        return g

    def percept_dist(self, h, a):
        self.check_action(a)
        if len(h) >= self.n_tranches:
            return [(tuple((0, 0.0) for _ in range(self.k)), 1.0)]
        w = a.index(1)
        rho = float(self.rho[w, self.holdings(h)[w]])
        obs = (w + 1, rho)
        return [(tuple((obs, rho if j == w else 0.0) for j in range(self.k)), 1.0)]


# -- scenario files -----------------------------------------------------------


@dataclass
class RLConfig:
    variant: str = "r2"
    episodes: int = 30_000
    alpha: float = 0.1
    gamma: float = 1.0
    epsilon_schedule: dict = field(default_factory=lambda: {"start": 1.0, "end": 0.0, "fraction": 0.8})
    bid_step: float = 50_000.0
    bid_max: float = 8_400_000.0
    eval_episodes: int = 200


@dataclass
class Scenario:
    refineries: list = field(default_factory=lambda: [Refinery(1.0), Refinery(2.0)])
    permit_cap: int = 15000
    tranche_size: int = 3000
    permit_price_fixed: float = 190.0
    rl: RLConfig = field(default_factory=RLConfig)
    seed: int = 0

    @classmethod
    def from_dict(cls, d):
        refs = [Refinery(float(r.get("m", 1.0)), float(r.get("capacity", 100.0)), float(r.get("margin", 0.20)))
                for r in d.get("refineries", [{"m": 1.0}, {"m": 2.0}])]
        rl = RLConfig(**d.get("rl", {}))
        return cls(refs, int(d.get("permit_cap", 15000)), int(d.get("tranche_size", 3000)),
                   float(d.get("permit_price_fixed", 190.0)), rl, check_seed(d.get("seed", 0)))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_dict(self):
        return {"refineries": [{"m": r.m, "capacity": r.capacity, "margin": r.margin} for r in self.refineries],
                "permit_cap": self.permit_cap, "tranche_size": self.tranche_size,
                "permit_price_fixed": self.permit_price_fixed, "rl": asdict(self.rl), "seed": self.seed}


def no_price_emissions(refineries):
    """Total emissions when every refinery runs at capacity."""
    return float(sum(emissions(r.m, r.capacity) for r in refineries))


def best_zero_price_allocation(env: CapTradeEnv):
    """Exhaustive scan over tranche splits: ``(shared profit, permits per refinery)`` of the best allocation."""
    best = None
    n = env.n_tranches
    for c in range(n + 1):
        split = (c, n - c)
        total = sum(r.profit(s * env.tranche) for r, s in zip(env.refineries, split))
        if best is None or total > best[0] + 1e-9:
            best = (total, tuple(s * env.tranche for s in split))
    return best


# -- Q-learning experiment ----------------------------------------------------


def make_bidders(env: CapTradeEnv, rl: RLConfig):
    bids = bid_grid(rl.bid_step, rl.bid_max)
    sched = EpsilonSchedule.from_config(rl.epsilon_schedule, rl.episodes)
    return [QLearningBidder(bids, rl.alpha, rl.gamma, sched, rl.variant, env.permit_cap, env.tranche, env.k)
            for _ in range(env.k)]


def play_episode(env: CapTradeEnv, agents, rng):
    """One auction episode, drawing from ``rng`` exactly as the protocol loop does.

    Per tranche: each agent's exploration draw and bid (agent order), then
    the mechanism's tie draw when the two bids are equal. Returns per-agent
    profits and payments and the winners.
    """
    k = env.k
    s = agents[0].state_index[(0,) * k]
    profit = np.zeros(k)
    paid = np.zeros(k)
    winners = []
    for _ in range(env.n_tranches):
        acts = [ag.choose(s, rng) for ag in agents]
        bids = [float(ag.bids[a]) for ag, a in zip(agents, acts)]
        w, pay = _second_price(bids, rng)
        g = agents[0].states[s][w] // env.tranche
        gain = float(env.rho[w, g]) - pay
        s_next = agents[0].next_state(s, w)
        for i, ag in enumerate(agents):
            ag.learn(s, acts[i], _reward(ag.variant, i, w, gain), s_next)
        profit[w] += gain
        paid[w] += pay
        winners.append(w)
        s = s_next
    return profit, paid, winners


def _reward(variant, i, w, gain):
    if variant == "r1":
        return gain if i == w else 0.0
    if variant == "r2":
        return gain
    return gain if i == w else -gain


@dataclass
class RLResult:
    variant: str
    seed: int
    curve: list
    final_profit: np.ndarray
    final_paid: np.ndarray
    final_avg_price: float
    agents: list = field(repr=False, default_factory=list)

    @property
    def shared_profit(self):
        return float(self.final_profit.sum())

    def curve_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode", "agent", "cumulative_utility", "avg_permit_price", "epsilon"])
        for row in self.curve:
            w.writerow(row)
        return buf.getvalue()

    def policy_tables(self):
        """State-indexed matrices keyed ``"g1,g2"``: greedy bids and max-Q returns per agent."""
        out = {}
        for i, ag in enumerate(self.agents):
            out[f"agent{i + 1}"] = {
                "policy": {f"{a},{b}": v for (a, b), v in ag.policy_matrix().items()},
                "returns": {f"{a},{b}": v for (a, b), v in ag.value_matrix().items()},
            }
        return out


def rl_experiment(variant="r2", episodes=None, seed=0, scenario: Scenario | None = None, log_every=None) -> RLResult:
    """Train two Q-learning bidders against each other, then evaluate their greedy policies.

    Training uses a single generator seeded by ``seed``. The final metrics
    average ``eval_episodes`` greedy episodes (ties still broken at random)
    with learning frozen.
    """
    sc = scenario if scenario is not None else Scenario()
    rl = RLConfig(**{**asdict(sc.rl), "variant": variant})
    if episodes is not None:
        rl.episodes = int(episodes)
    env = CapTradeEnv(sc.refineries, sc.permit_cap, sc.tranche_size)
    if env.k != 2:
        raise ConfigurationError("the RL experiment uses exactly two refineries")
    agents = make_bidders(env, rl)
    rng = make_rng(check_seed(seed))
    log_every = log_every or max(rl.episodes // 200, 1)
    permits = env.permit_cap
    curve = []
    acc_profit, acc_paid, n_acc = np.zeros(2), 0.0, 0
    for e in range(rl.episodes):
        for ag in agents:
            ag.start_episode()
        profit, paid, _ = play_episode(env, agents, rng)
        acc_profit += profit
        acc_paid += paid.sum()
        n_acc += 1
        if (e + 1) % log_every == 0 or e + 1 == rl.episodes:
            for i in range(2):
                curve.append((e + 1, i + 1, acc_profit[i] / n_acc, acc_paid / n_acc / permits,
                              agents[i].current_epsilon()))
            acc_profit, acc_paid, n_acc = np.zeros(2), 0.0, 0
    for ag in agents:
        ag.learning = False
    tot_p, tot_c = np.zeros(2), np.zeros(2)
    for _ in range(rl.eval_episodes):
        profit, paid, _ = play_episode(env, agents, rng)
        tot_p += profit
        tot_c += paid
    n = max(rl.eval_episodes, 1)
    return RLResult(variant, int(seed), curve, tot_p / n, tot_c / n, float(tot_c.sum() / n / permits), agents)
