"""Exact backward induction over the history tree of a mechanism-controlled environment.

At every decision node ``h`` (step ``t = len(h) + 1``) each agent declares a
table over ``Alt``; VCG picks the first welfare maximiser in canonical
order and charges Clark payments. For agent ``i`` and action ``a``:

* ``q[i, a]`` is the expected reward from step ``t`` to ``m_i`` when ``a`` is
  taken now and the mechanism controls every later step;
* ``c[i, a]`` is the expected payment from step ``t + 1`` to ``m_i``;
* ``q_bar``/``c_bar`` evaluate these at the chosen action, ``c_bar``
  including the current payment.

What agents declare decides the variant: ``q - c`` (rational valuations),
``q`` alone (alternative), or a self-rational ``q_hat`` in which each agent
pretends to control the joint action.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from ..envcore import DEFAULT_NODE_BUDGET, EMPTY, History
from ..errors import BudgetExceededError, ConfigurationError, ContractError
from ..mechanisms import TIE_TOL, ValuationTable, argmax_set

KINDS = ("rational", "alternative", "self-rational")


@dataclass
class Node:
    h: History
    t: int
    q: np.ndarray
    c: np.ndarray
    declared: np.ndarray
    chosen: int
    payments: np.ndarray
    q_bar: np.ndarray
    c_bar: np.ndarray

    @property
    def v(self):
        return self.q - self.c

    @property
    def v_bar(self):
        return self.q_bar - self.c_bar


def first_argmax(welfare):
    return int(argmax_set(welfare, TIE_TOL)[0])


def clark_vector(declared, chosen):
    others = declared.sum(axis=0)[None, :] - declared
    return others.max(axis=1) - others[:, chosen]


class _Budget:
    def __init__(self, limit):
        self.limit = limit
        self.used = 0

    def tick(self, n=1):
        self.used += n
        if self.used > self.limit:
            raise BudgetExceededError(f"tree enumeration exceeded the node budget of {self.limit}")


def _check_horizons(env, horizons, T):
    horizons = [int(m) for m in horizons]
    if len(horizons) != env.k:
        raise ConfigurationError(f"need one horizon per agent ({env.k}), got {len(horizons)}")
    if any(m < 1 for m in horizons):
        raise ConfigurationError("horizons must be >= 1")
    T = max(horizons) if T is None else int(T)
    if T < max(horizons):
        raise ConfigurationError("T must cover every agent's horizon")
    return horizons, T


class OracleTables:
    """Per-node tables produced by :func:`rational_tables` and its variants."""

    def __init__(self, env, horizons, T, kind, nodes):
        self.env = env
        self.horizons = horizons
        self.T = T
        self.kind = kind
        self.nodes = nodes

    def node(self, h) -> Node:
        try:
            return self.nodes[History(h)]
        except KeyError:
            raise ContractError(f"history {History(h).key()!r} is not in the table (t > T or unreachable)") from None

    def has(self, h):
        return History(h) in self.nodes

    def _pos(self, a):
        return self.env.alt.position(tuple(a))

    def q(self, i, h, a):
        return float(self.node(h).q[i, self._pos(a)])

    def c(self, i, h, a):
        return float(self.node(h).c[i, self._pos(a)])

    def v(self, i, h, a):
        return float(self.node(h).v[i, self._pos(a)])

    def q_bar(self, i, h):
        h = History(h)
        return float(self.nodes[h].q_bar[i]) if h in self.nodes else 0.0

    def c_bar(self, i, h):
        h = History(h)
        return float(self.nodes[h].c_bar[i]) if h in self.nodes else 0.0

    def v_bar(self, i, h):
        return self.q_bar(i, h) - self.c_bar(i, h)

    def declared_table(self, h, i) -> ValuationTable:
        return ValuationTable(self.env.alt, self.node(h).declared[i])

    def declared_profile(self, h):
        return [self.declared_table(h, i) for i in range(self.env.k)]

    def value_table(self, h, i) -> ValuationTable:
        return ValuationTable(self.env.alt, self.node(h).v[i])

    def chosen(self, h):
        return self.env.alt[self.node(h).chosen]

    def rows(self):
        """Flat rows ``(t, agent, history_key, action_key, q, c, v)`` in tree order."""
        keys = self.env.alt.keys()
        for h, nd in self.nodes.items():
            hk = h.key()
            for i in range(self.env.k):
                for n, ak in enumerate(keys):
                    yield (nd.t, i + 1, hk, ak, float(nd.q[i, n]), float(nd.c[i, n]),
                           float(nd.q[i, n] - nd.c[i, n]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "agent", "history_key", "action_key", "q", "c", "v"])
        for row in self.rows():
            w.writerow([row[0], row[1], row[2], row[3], repr(row[4]), repr(row[5]), repr(row[6])])
        return buf.getvalue()

    def __repr__(self):
        return f"OracleTables(kind={self.kind!r}, T={self.T}, horizons={self.horizons}, nodes={len(self.nodes)})"


def _solve(env, horizons, T, kind, node_budget, q_hat=None):
    k, n_alt = env.k, len(env.alt)
    m = np.array(horizons)
    budget = _Budget(node_budget)
    nodes = {}
    zeros_k = np.zeros(k)

    def solve(h):
        budget.tick()
        t = len(h) + 1
        q = np.zeros((k, n_alt))
        c = np.zeros((k, n_alt))
        live_q = t <= m
        live_c = t < m
        for n, a in enumerate(env.alt):
            for x, p in env.percept_dist(h, a):
                budget.tick()
                r = np.array([xi[1] for xi in x], dtype=float)
                if t < T:
                    child = solve(h.extend(a, x))
                    qb, cb = child.q_bar, child.c_bar
                else:
                    qb, cb = zeros_k, zeros_k
                q[:, n] += p * (r + qb)
                c[:, n] += p * cb
        q[~live_q] = 0.0
        c[~live_c] = 0.0
        if kind == "rational":
            declared = q - c
        elif kind == "alternative":
            declared = q.copy()
        else:
            declared = q_hat[h]
        chosen = first_argmax(declared.sum(axis=0))
        pays = clark_vector(declared, chosen)
        q_bar = q[:, chosen].copy()
        c_bar = pays + c[:, chosen]
        nd = Node(h, t, q, c, declared, chosen, pays, q_bar, c_bar)
        nodes[h] = nd
        return nd

    solve(EMPTY)
    # present nodes root-first, breadth by step, for readable exports
    ordered = dict(sorted(nodes.items(), key=lambda kv: len(kv[0])))
    return OracleTables(env, list(horizons), T, kind, ordered)


def rational_tables(env, horizons, T=None, node_budget=DEFAULT_NODE_BUDGET) -> OracleTables:
    """Rational q, social-cost and valuation tables, with agents declaring ``v = q - c``."""
    horizons, T = _check_horizons(env, horizons, T)
    return _solve(env, horizons, T, "rational", node_budget)


def alternative_tables(env, horizons, T=None, node_budget=DEFAULT_NODE_BUDGET) -> OracleTables:
    """Variant where agents declare their rational ``q`` and ignore future costs."""
    horizons, T = _check_horizons(env, horizons, T)
    return _solve(env, horizons, T, "alternative", node_budget)


class SelfRationalQ:
    """``q_hat[h][i, a]``: agent i's optimal value if it alone picked every later joint action."""

    def __init__(self, env, horizons, T, table):
        self.env = env
        self.horizons = horizons
        self.T = T
        self.table = table

    def __getitem__(self, h):
        return self.table[History(h)]

    def q(self, i, h, a):
        return float(self.table[History(h)][i, self.env.alt.position(tuple(a))])

    def table_for(self, h, i) -> ValuationTable:
        return ValuationTable(self.env.alt, self.table[History(h)][i])


def self_rational_q(env, horizons, T=None, node_budget=DEFAULT_NODE_BUDGET) -> SelfRationalQ:
    """Per-agent expectimax: ``q_hat_t(h, a) = E[r + max_b q_hat_{t+1}(hax, b)]`` for ``t <= m_i``."""
    horizons, T = _check_horizons(env, horizons, T)
    k, n_alt = env.k, len(env.alt)
    m = np.array(horizons)
    budget = _Budget(node_budget)
    table = {}

    def solve(h):
        budget.tick()
        t = len(h) + 1
        q = np.zeros((k, n_alt))
        for n, a in enumerate(env.alt):
            for x, p in env.percept_dist(h, a):
                budget.tick()
                r = np.array([xi[1] for xi in x], dtype=float)
                nxt = solve(h.extend(a, x)).max(axis=1) if t < T else 0.0
                q[:, n] += p * (r + nxt)
        q[t > m] = 0.0
        table[h] = q
        return q

    solve(EMPTY)
    return SelfRationalQ(env, horizons, T, table)


def self_rational_tables(env, horizons, T=None, node_budget=DEFAULT_NODE_BUDGET) -> OracleTables:
    """Protocol continuation values when every agent declares its self-rational ``q_hat``."""
    horizons, T = _check_horizons(env, horizons, T)
    q_hat = self_rational_q(env, horizons, T, node_budget)
    return _solve(env, horizons, T, "self-rational", node_budget, q_hat=q_hat.table)


def make_tables(env, horizons, kind="rational", T=None, node_budget=DEFAULT_NODE_BUDGET) -> OracleTables:
    builders = {"rational": rational_tables, "alternative": alternative_tables,
                "self-rational": self_rational_tables}
    try:
        return builders[kind](env, horizons, T, node_budget)
    except KeyError:
        raise ConfigurationError(f"unknown table kind {kind!r}; choose from {KINDS}") from None


def expected_cumulative_utility(env, tables: OracleTables, i) -> float:
    """Agent ``i``'s expected total reward minus payments under truthful declarations."""
    return tables.v_bar(i, EMPTY)


def unrolled_cumulative_utility(env, tables: OracleTables, i) -> float:
    """Same quantity by walking every percept sequence along the chosen actions.

    Rewards are counted up to agent ``i``'s horizon; payments are recomputed
    from the declared tables at each node.
    """
    m = tables.horizons[i]
    total = 0.0
    stack = [(EMPTY, 1.0)]
    while stack:
        h, prob = stack.pop()
        t = len(h) + 1
        if t > tables.T:
            continue
        nd = tables.node(h)
        declared = nd.declared
        welfare = declared.sum(axis=0)
        n = int(np.flatnonzero(welfare >= welfare.max() - TIE_TOL)[0])
        others = welfare - declared[i]
        total -= prob * (others.max() - others[n])
        a = env.alt[n]
        for x, p in env.percept_dist(h, a):
            if t <= m:
                total += prob * p * x[i][1]
            stack.append((h.extend(a, x), prob * p))
    return float(total)


def _report_matrix(env, reports):
    if isinstance(reports, np.ndarray):
        return np.asarray(reports, dtype=float)
    return np.vstack([np.asarray(getattr(r, "values", r), dtype=float) for r in reports])


def realisable_cu(env, tables: OracleTables, h, reports, i, chosen=None) -> float:
    """Expected ``r_{t,i} - p_i(reports) + q_bar_{t+1,i} - c_bar_{t+1,i}`` at history ``h``.

    The joint action is the first maximiser of the reported welfare unless
    ``chosen`` forces a particular member of the tie set.
    """
    h = History(h)
    R = _report_matrix(env, reports)
    welfare = R.sum(axis=0)
    if chosen is None:
        n = first_argmax(welfare)
    else:
        n = env.alt.position(tuple(chosen))
    others = welfare - R[i]
    pay = others.max() - others[n]
    a = env.alt[n]
    value = 0.0
    for x, p in env.percept_dist(h, a):
        child = h.extend(a, x)
        value += p * (x[i][1] + tables.q_bar(i, child) - tables.c_bar(i, child))
    return float(value - pay)
