"""History-based multi-agent environments and the mechanism-controlled protocol loop.

An environment is a pure function of ``(history, joint_action)`` returning a
finite distribution over joint percepts. A joint percept is a tuple with one
``(observation, reward)`` pair per agent.

Each protocol step: every agent declares a :class:`ValuationTable`, the
mechanism picks a joint action and payments, the environment samples a
percept, and each agent is shown what the visibility setting allows.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from .actions import JointActionSet, action_key
from .errors import BudgetExceededError, ContractError, DomainError, ProtocolError
from .mechanisms import ClarkVCG, ValuationTable

DEFAULT_NODE_BUDGET = 10**6
VISIBILITIES = ("own", "full")


def make_rng(seed):
    """The run generator: numpy PCG64 seeded with an unsigned integer."""
    return np.random.Generator(np.random.PCG64(seed))


def percept_key(percept) -> str:
    return ",".join(f"{o}:{r:g}" for o, r in percept)


class History(tuple):
    """Immutable sequence of ``(joint_action, joint_percept)`` pairs; ``History()`` is the empty history."""

    __slots__ = ()

    def extend(self, action, percept) -> "History":
        return History(self + ((tuple(action), tuple(percept)),))

    @property
    def t(self):
        """Index of the next step (1-based)."""
        return len(self) + 1

    def key(self) -> str:
        return ";".join(f"{action_key(a)}>{percept_key(x)}" for a, x in self)

    def rewards(self, i):
        return [x[i][1] for _, x in self]

    def view(self, i) -> "History":
        """Agent ``i``'s projection: joint actions with its own percept only."""
        return History((a, (x[i],)) for a, x in self)


EMPTY = History()


class EnvModel:
    """Base class for environments given by conditional percept kernels.

    Subclasses implement :meth:`percept_dist`. ``sequence_prob`` defaults to
    the chain product of conditionals; envs described by joint sequence
    probabilities can override it, which is what the chronological check
    inspects.
    """

    name = "env"

    def __init__(self, alt: JointActionSet, name=None):
        self.alt = alt
        self.k = alt.k
        self.action_sets = alt.action_sets
        if name is not None:
            self.name = name

    def percept_dist(self, h: History, a) -> list:
        """List of ``(joint_percept, probability)`` with positive probability."""
        raise NotImplementedError

    def check_action(self, a):
        if a not in self.alt:
            raise DomainError(self.alt.describe_infeasible(a))

    def percept_support(self, h, a):
        self.check_action(a)
        return [x for x, _ in self.percept_dist(h, a)]

    def prob(self, h, a, x) -> float:
        self.check_action(a)
        x = tuple(tuple(c) for c in x)
        return float(sum(p for y, p in self.percept_dist(h, a) if y == x))

    def sequence_prob(self, actions, percepts) -> float:
        h = EMPTY
        p = 1.0
        for a, x in zip(actions, percepts):
            p *= self.prob(h, a, x)
            if p == 0.0:
                return 0.0
            h = h.extend(a, x)
        return p

    def sample(self, h, a, rng):
        dist = self.percept_dist(h, a)
        if len(dist) == 1:
            return dist[0][0]
        probs = np.array([p for _, p in dist])
        return dist[int(rng.choice(len(dist), p=probs / probs.sum()))][0]

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, k={self.k}, |Alt|={len(self.alt)})"


class FunctionEnv(EnvModel):
    """Environment from a pure kernel ``kernel(history, joint_action) -> [(percept, prob)]``."""

    def __init__(self, alt, kernel, name="function-env"):
        super().__init__(alt, name)
        self._kernel = kernel

    def percept_dist(self, h, a):
        return [(tuple(tuple(c) for c in x), float(p)) for x, p in self._kernel(h, a) if p > 0]


def env_prob(env: EnvModel, h: History, a, x) -> float:
    """``phi(x | h, a)``; zero outside the support, domain error for infeasible ``a``."""
    return env.prob(h, a, x)


@dataclass
class ChronologicalReport:
    depth: int
    nodes: int
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations


def check_chronological(env: EnvModel, depth, budget=DEFAULT_NODE_BUDGET, tol=1e-9) -> ChronologicalReport:
    """Exhaustively compare each step's marginal with the previous step's probability.

    For every action sequence ``a_1..a_n`` (``n <= depth``) and every percept
    prefix ``x_<n`` with positive probability, checks
    ``sum_{x_n} rho_n(x_1..x_n | a_1..a_n) == rho_{n-1}(x_<n | a_<n)`` and that
    ``rho_1`` sums to one.
    """
    report = ChronologicalReport(depth, 0)
    counter = [0]

    def tick():
        counter[0] += 1
        if counter[0] > budget:
            raise BudgetExceededError(f"chronological check exceeded the node budget of {budget}")

    def walk(actions, percepts, h, prefix_p):
        n = len(actions)
        if n == depth:
            return
        for a in env.alt:
            tick()
            support = env.percept_support(h, a)
            acts = actions + [a]
            total = 0.0
            for x in support:
                tick()
                total += env.sequence_prob(acts, percepts + [x])
            if abs(total - prefix_p) > tol:
                report.violations.append({
                    "step": n + 1,
                    "actions": [action_key(b) for b in acts],
                    "prefix": h.key(),
                    "marginal": total,
                    "expected": prefix_p,
                })
            for x in support:
                p = env.sequence_prob(acts, percepts + [x])
                if p > 0:
                    walk(acts, percepts + [x], h.extend(a, x), p)

    walk([], [], EMPTY, 1.0)
    report.nodes = counter[0]
    return report


# -- protocol ---------------------------------------------------------------


class AgentPolicy:
    """Interface for protocol participants.

    ``declare`` receives the step index and the agent's visible history
    (the full history under ``visibility="full"``, otherwise its own
    projection) and returns a :class:`ValuationTable` on ``env.alt``.
    ``observe`` receives a :class:`StepView` after the step resolves.
    """

    def reset(self, index, env, rng, visibility="own"):
        self.index = index
        self.env = env
        self.rng = rng
        self.visibility = visibility

    def declare(self, t, history) -> ValuationTable:
        raise NotImplementedError

    def observe(self, view) -> None:
        pass


@dataclass(frozen=True)
class StepView:
    """What agent ``i`` learns after step ``t``."""

    t: int
    chosen_action: tuple
    percept: tuple
    payment: float
    full_percept: tuple | None = None
    payments: tuple | None = None
    declared: tuple | None = None


@dataclass(frozen=True)
class StepRecord:
    t: int
    declared_valuations: tuple
    chosen_action: tuple
    percept: tuple
    payments: tuple
    instantaneous_utilities: tuple

    def to_json(self) -> dict:
        return {
            "t": self.t,
            "declared_valuations": [v.as_dict() for v in self.declared_valuations],
            "chosen_action": action_key(self.chosen_action),
            "percept": [[_jsonable(o), float(r)] for o, r in self.percept],
            "payments": [float(p) for p in self.payments],
            "instantaneous_utilities": [float(u) for u in self.instantaneous_utilities],
        }


def _jsonable(o):
    if isinstance(o, (tuple, list)):
        return [_jsonable(x) for x in o]
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    return o


@dataclass
class ProtocolTrace:
    records: list
    seed: int
    env_id: str
    mechanism_id: str

    @property
    def k(self):
        return len(self.records[0].payments) if self.records else 0

    def cumulative_utilities(self):
        return [sum(rec.instantaneous_utilities[i] for rec in self.records) for i in range(self.k)]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(rec.to_json()) + "\n" for rec in self.records)


def total_social_welfare(trace: ProtocolTrace) -> float:
    if not trace.records:
        raise ContractError("trace is empty")
    return float(sum(trace.cumulative_utilities()))


def run_protocol(env: EnvModel, mech, agents, horizon, seed, visibility="own") -> ProtocolTrace:
    """Run the mechanism-controlled interaction for ``horizon`` steps.

    One PCG64 stream (seeded by ``seed``) is shared, in protocol order, by
    the agents (via ``reset``), the mechanism's tie-breaking or sampling and
    the environment's percept sampling.
    """
    if len(agents) != env.k:
        raise ContractError(f"environment has {env.k} agents but {len(agents)} policies were given")
    if horizon < 1:
        raise ContractError("horizon must be at least 1")
    if visibility not in VISIBILITIES:
        raise ContractError(f"visibility must be one of {VISIBILITIES}")
    mech = ClarkVCG() if mech is None else mech
    rng = make_rng(seed)
    for i, ag in enumerate(agents):
        ag.reset(i, env, rng, visibility)
    h = EMPTY
    records = []
    for t in range(1, horizon + 1):
        declared = []
        for i, ag in enumerate(agents):
            vis = h if visibility == "full" else h.view(i)
            table = ag.declare(t, vis)
            if not isinstance(table, ValuationTable) or table.alt != env.alt:
                raise ProtocolError(f"agent {i} returned a valuation that is not on the feasible action set", t)
            declared.append(table)
        outcome = mech(declared, rng)
        a = outcome.chosen
        x = env.sample(h, a, rng)
        pays = tuple(float(p) for p in outcome.payments)
        utils = tuple(float(x[i][1]) - pays[i] for i in range(env.k))
        rec = StepRecord(t, tuple(declared), a, x, pays, utils)
        records.append(rec)
        for i, ag in enumerate(agents):
            if visibility == "full":
                view = StepView(t, a, (x[i],), pays[i], x, pays, tuple(declared))
            else:
                view = StepView(t, a, (x[i],), pays[i])
            ag.observe(view)
        h = h.extend(a, x)
    return ProtocolTrace(records, int(seed), env.name, getattr(mech, "name", type(mech).__name__))


# -- reference environments -------------------------------------------------


class FactoryEnv(EnvModel):
    """One perishable unit per step while raw material lasts; the joint action names the consumer.

    Agent ``i`` is paid ``values[i]`` the first time it consumes, provided it
    has arrived (``t >= arrivals[i]``). Joint actions are one-hot: agent i
    consumes iff its component is 1. Every agent observes the consumer's
    1-based index (0 once material has run out).
    """

    name = "factory"

    def __init__(self, values=(100.0, 80.0, 60.0), arrivals=(1, 1, 2), units=2):
        if len(values) != len(arrivals):
            raise DomainError("values and arrivals must have one entry per agent")
        super().__init__(JointActionSet.exclusive(len(values)))
        self.values = tuple(float(v) for v in values)
        self.arrivals = tuple(int(a) for a in arrivals)
        self.units = int(units)

    def consume_action(self, i):
        """Joint action in which 0-based agent ``i`` consumes."""
        return self.alt[i]

    def percept_dist(self, h, a):
        self.check_action(a)
        t = len(h) + 1
        who = a.index(1)
        if t > self.units:
            return [(tuple((0, 0.0) for _ in range(self.k)), 1.0)]
        consumed = any(b[who] == 1 and x[who][1] > 0 for b, x in h)
        gain = self.values[who] if (t >= self.arrivals[who] and not consumed) else 0.0
        return [(tuple((who + 1, gain if j == who else 0.0) for j in range(self.k)), 1.0)]


class SecondPriceEnv(EnvModel):
    """Single-item sale: the joint action names the winner, who receives its value."""

    name = "second-price"

    def __init__(self, values=(100.0, 90.0)):
        super().__init__(JointActionSet.exclusive(len(values)))
        self.values = tuple(float(v) for v in values)

    def percept_dist(self, h, a):
        self.check_action(a)
        who = a.index(1)
        return [(tuple((who + 1, self.values[j] if j == who else 0.0) for j in range(self.k)), 1.0)]


class BilateralTradeEnv(EnvModel):
    """Buyer (agent 0) and seller (agent 1) either trade (1, 1) or not (0, 0)."""

    name = "bilateral-trade"

    def __init__(self, theta_b=100.0, theta_s=60.0):
        super().__init__(JointActionSet([(0, 0), (1, 1)], [(0, 1), (0, 1)]))
        self.theta_b = float(theta_b)
        self.theta_s = float(theta_s)

    def percept_dist(self, h, a):
        self.check_action(a)
        if a == (1, 1):
            return [(((1, self.theta_b), (1, -self.theta_s)), 1.0)]
        return [(((0, 0.0), (0, 0.0)), 1.0)]


class CoinEnv(EnvModel):
    """One agent, one action; observes heads (reward 1) with probability ``p``."""

    name = "coin"

    def __init__(self, p=0.3):
        super().__init__(JointActionSet([(0,)], [(0,)]))
        self.p = float(p)

    def percept_dist(self, h, a):
        self.check_action(a)
        out = []
        if self.p > 0:
            out.append(((("H", 1.0),), self.p))
        if self.p < 1:
            out.append(((("T", 0.0),), 1.0 - self.p))
        return out


class RandomSmallEnv(EnvModel):
    """Seeded random environment for property tests.

    Each ``(history, joint_action)`` gets its own small random kernel over
    ``n_obs`` joint percepts with non-negative rewards on a 0.1 grid, derived
    deterministically from the seed and the history key, so the env is a
    pure function.
    """

    name = "random-small"

    def __init__(self, k=2, n_actions=2, n_obs=2, depth=2, seed=0, reward_scale=1.0):
        super().__init__(JointActionSet.product([tuple(range(n_actions))] * k))
        self.n_obs = int(n_obs)
        self.depth = int(depth)
        self.seed = int(seed)
        self.reward_scale = float(reward_scale)
        self._cache = {}

    def percept_dist(self, h, a):
        self.check_action(a)
        key = (h, a)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        tag = zlib.crc32(f"{h.key()}#{action_key(a)}".encode())
        rng = np.random.default_rng([self.seed, tag])
        probs = rng.dirichlet(np.ones(self.n_obs))
        rewards = np.round(rng.uniform(0, 1, size=(self.n_obs, self.k)), 1) * self.reward_scale
        dist = [(tuple((o, float(rewards[o, i])) for i in range(self.k)), float(probs[o]))
                for o in range(self.n_obs)]
        self._cache[key] = dist
        return dist


class FutureLeakEnv(EnvModel):
    """A deliberately non-chronological fixture.

    Its conditional kernel is a fair coin, but its joint sequence
    probabilities make the first coin's marginal depend on the second action.
    """

    name = "future-leak"

    def __init__(self):
        super().__init__(JointActionSet([(0,), (1,)], [(0, 1)]))

    def percept_dist(self, h, a):
        return [(((0, 0.0),), 0.5), (((1, 1.0),), 0.5)]

    def sequence_prob(self, actions, percepts):
        base = super().sequence_prob(actions, percepts)
        if len(actions) < 2 or base == 0.0:
            return base
        bias = 0.9 if tuple(actions[1]) == (1,) else 0.1
        return base * 2.0 * (bias if percepts[0][0][0] == 0 else 1.0 - bias)


def factory_env(values=(100.0, 80.0, 60.0), arrivals=(1, 1, 2), units=2):
    return FactoryEnv(values, arrivals, units)


def second_price_env(values=(100.0, 90.0)):
    return SecondPriceEnv(values)


def bilateral_trade_env(theta_b=100.0, theta_s=60.0):
    return BilateralTradeEnv(theta_b, theta_s)


def coin_env(p=0.3):
    return CoinEnv(p)


def random_small_env(k=2, n_actions=2, n_obs=2, depth=2, seed=0):
    return RandomSmallEnv(k, n_actions, n_obs, depth, seed)


REFERENCE_ENVS = {
    "factory": factory_env,
    "second-price": second_price_env,
    "bilateral-trade": bilateral_trade_env,
    "coin": coin_env,
    "random-small": random_small_env,
    "future-leak": FutureLeakEnv,
}


def make_env(name, **params) -> EnvModel:
    try:
        ctor = REFERENCE_ENVS[name]
    except KeyError:
        raise DomainError(f"unknown environment {name!r}; known: {sorted(REFERENCE_ENVS)}") from None
    return ctor(**params)


def enumerate_histories(env, depth, budget=DEFAULT_NODE_BUDGET):
    """All histories of length ``< depth`` that some action sequence reaches with positive probability."""
    out = [EMPTY]
    frontier = [EMPTY]
    for _ in range(depth - 1):
        nxt = []
        for h in frontier:
            for a in env.alt:
                for x, _ in env.percept_dist(h, a):
                    nxt.append(h.extend(a, x))
            if len(out) + len(nxt) > budget:
                raise BudgetExceededError(f"history enumeration exceeded the node budget of {budget}")
        out.extend(nxt)
        frontier = nxt
    return out
