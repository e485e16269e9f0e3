"""Non-learning protocol agents: table-driven oracles, scripted deviations and fixed bidders."""
from __future__ import annotations

import numpy as np

from ..envcore import EMPTY, AgentPolicy, History
from ..errors import ContractError
from ..mechanisms import ValuationTable


class OracleAgent(AgentPolicy):
    """Declares its row of precomputed oracle tables at the current history.

    Under full visibility the history is known. Under own visibility the
    agent keeps a posterior over full histories consistent with what it saw
    (joint actions and its own percepts) and declares the posterior mean of
    its rows. Past the tables' horizon it declares zeros.
    """

    def __init__(self, tables):
        self.tables = tables

    def reset(self, index, env, rng, visibility="own"):
        super().reset(index, env, rng, visibility)
        if env is not self.tables.env and env.alt != self.tables.env.alt:
            raise ContractError("oracle tables were built for a different environment")
        self.belief = {EMPTY: 1.0}

    def row(self, h):
        if not self.tables.has(h):
            return np.zeros(len(self.env.alt))
        return self.tables.node(h).declared[self.index]

    def declare(self, t, history) -> ValuationTable:
        if self.visibility == "full":
            return ValuationTable(self.env.alt, self.row(History(history)))
        vals = sum(p * self.row(h) for h, p in self.belief.items())
        return ValuationTable(self.env.alt, np.asarray(vals, dtype=float))

    def observe(self, view) -> None:
        if self.visibility == "full":
            return
        a, own = tuple(view.chosen_action), view.percept[0]
        post = {}
        for h, p in self.belief.items():
            for x, px in self.env.percept_dist(h, a):
                if tuple(x[self.index]) == tuple(own):
                    nh = h.extend(a, x)
                    post[nh] = post.get(nh, 0.0) + p * px
        z = sum(post.values())
        if z <= 0:
            raise ContractError(f"agent {self.index} observed a percept its model rules out")
        self.belief = {h: p / z for h, p in post.items()}


class ScriptedAgent(AgentPolicy):
    """Wraps another agent and replaces its declaration at chosen steps.

    ``overrides`` maps a step index to a sequence of values on ``alt`` (in
    canonical order) or to ``callable(t, history, base_table) -> values``.
    """

    def __init__(self, base, overrides):
        self.base = base
        self.overrides = dict(overrides)

    def reset(self, index, env, rng, visibility="own"):
        super().reset(index, env, rng, visibility)
        self.base.reset(index, env, rng, visibility)

    def declare(self, t, history) -> ValuationTable:
        table = self.base.declare(t, history)
        o = self.overrides.get(t)
        if o is None:
            return table
        vals = o(t, history, table) if callable(o) else o
        if isinstance(vals, ValuationTable):
            return vals
        return ValuationTable(self.env.alt, np.asarray(vals, dtype=float))

    def observe(self, view) -> None:
        self.base.observe(view)


class FixedAgent(AgentPolicy):
    """Declares the same values every step."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def declare(self, t, history) -> ValuationTable:
        return ValuationTable(self.env.alt, self.values)
