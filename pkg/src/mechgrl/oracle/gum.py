"""Budget-balanced transfers that pin each truthful agent's expected utility.

Agents share a horizon ``T`` and report q-tables; the joint action is the
first maximiser of the reported sum. ``upsilon(j, t, ...)`` is the
principal's anticipated payoff of agent ``j``: rewards so far plus
``q^j_t`` at the action the reports would pick, averaged over the not yet
revealed components of the last joint percept. Percept components are
revealed agent by agent; as agent ``i``'s component is revealed its true
table is swapped for its report, and the change in every agent's
anticipated payoff is recorded as ``gamma[i, j]``. Agent i's net transfer
``p^i`` credits the ``gamma[i, .]`` row and debits the ``gamma[., i]``
column, so transfers sum to zero at every stage.

A report policy is ``report(t, history, truth, i) -> array`` or ``None``
for truthful. Policies must be deterministic in ``(t, history)``.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from ..envcore import EMPTY, History, make_rng
from ..errors import ConfigurationError
from .tables import alternative_tables, first_argmax


def truthful_report(t, h, truth, i):
    return truth


def inflate_report(action_index, amount=1.0):
    """Adds ``amount`` to one action's reported value."""
    def report(t, h, truth, i):
        out = truth.copy()
        out[action_index] += amount
        return out
    return report


def random_report(seed, scale=100.0):
    """A fixed arbitrary report per ``(t, history)``, unrelated to the truth."""
    def report(t, h, truth, i):
        tag = zlib.crc32(f"{t}#{History(h).key()}#{i}".encode())
        return np.random.default_rng([seed, tag]).uniform(0, scale, size=truth.size)
    return report


@dataclass
class GUMRun:
    """One realised run: stage transfers ``gammas[t]``, net ``payments[t-1, i]`` for t = 1..T+1."""

    history: History
    gammas: dict
    payments: np.ndarray
    rewards: np.ndarray
    utilities: np.ndarray


class GUM:
    """Transfer computations for one environment, horizon and report profile."""

    def __init__(self, env, T, reports=None, tables=None, horizons=None):
        if horizons is not None and len(set(int(m) for m in horizons)) > 1:
            raise ConfigurationError("the guaranteed-utility transfers need a common horizon for all agents")
        self.env = env
        self.k = env.k
        self.T = int(T)
        self.tables = tables if tables is not None else alternative_tables(env, [self.T] * env.k)
        reports = [None] * env.k if reports is None else list(reports)
        if len(reports) != env.k:
            raise ConfigurationError("need one report policy per agent")
        self.reports = [truthful_report if r is None else r for r in reports]
        self._profile_cache = {}

    # -- building blocks ---------------------------------------------------

    def truth(self, h):
        return self.tables.node(h).q

    def reported(self, h):
        """Matrix of reports at ``h`` (row i is agent i's reported q-table)."""
        h = History(h)
        hit = self._profile_cache.get(h)
        if hit is None:
            t = len(h) + 1
            truth = self.truth(h)
            hit = np.vstack([np.asarray(self.reports[i](t, h, truth[i].copy(), i), dtype=float)
                             for i in range(self.k)])
            self._profile_cache[h] = hit
        return hit

    def mixed_choice(self, h, n_reported):
        """Action index picked when agents ``< n_reported`` report and the rest tell the truth."""
        truth = self.truth(h)
        if n_reported == 0:
            return self.tables.node(h).chosen
        R = truth.copy()
        R[:n_reported] = self.reported(h)[:n_reported]
        return first_argmax(R.sum(axis=0))

    def protocol_action(self, h):
        return self.env.alt[self.mixed_choice(h, self.k)]

    def _completions(self, h_prev, a_prev, prefix):
        out = []
        total = 0.0
        for x, p in self.env.percept_dist(h_prev, a_prev):
            if tuple(x[:len(prefix)]) == tuple(prefix):
                out.append((x, p))
                total += p
        return [(x, p / total) for x, p in out]

    def _payoff_full(self, j, t, h, n_reported):
        past = sum(x[j][1] for _, x in h)
        if t > self.T:
            return past
        n = self.mixed_choice(h, n_reported)
        return past + self.tables.node(h).q[j, n]

    def upsilon(self, j, t, h_prev=None, a_prev=None, prefix=(), n_reported=0):
        """Anticipated payoff of agent ``j`` at stage ``t``.

        For ``t == 1`` the partial history is empty. Otherwise it is
        ``h_prev, a_prev`` followed by the revealed percept components
        ``prefix``; ``n_reported`` agents (in index order) use their reports.
        """
        if t == 1:
            return self._payoff_full(j, 1, EMPTY, n_reported)
        h_prev = History(h_prev)
        return sum(p * self._payoff_full(j, t, h_prev.extend(a_prev, x), n_reported)
                   for x, p in self._completions(h_prev, a_prev, prefix))

    def _upsilon_levels(self, t, h_prev, a_prev, x):
        """``U[l, j]`` = anticipated payoff of j after l components revealed and l reports swapped in."""
        U = np.empty((self.k + 1, self.k))
        for lvl in range(self.k + 1):
            prefix = () if x is None else tuple(x[:lvl])
            for j in range(self.k):
                U[lvl, j] = self.upsilon(j, t, h_prev, a_prev, prefix, lvl)
        return U

    def stage_gammas(self, t, h_prev=None, a_prev=None, x=None):
        """``gamma[i, j]``: change in j's anticipated payoff when i's component and report are revealed."""
        U = self._upsilon_levels(t, h_prev, a_prev, x)
        return U[1:] - U[:-1]

    @staticmethod
    def net_payments(gamma):
        """``p^i = sum_{j!=i} gamma[i, j] - sum_{j!=i} gamma[j, i]``, added to agent i's utility."""
        off = gamma - np.diag(np.diag(gamma))
        return off.sum(axis=1) - off.sum(axis=0)

    # -- runs -------------------------------------------------------------

    def transfers_along(self, steps):
        """All stage transfers for a realised list of ``(joint_action, percept)`` of length ``T``."""
        gammas = {}
        pays = np.zeros((self.T + 1, self.k))
        h = EMPTY
        for t in range(1, self.T + 2):
            if t == 1:
                g = self.stage_gammas(1)
            else:
                a_prev, x_prev = steps[t - 2]
                g = self.stage_gammas(t, h, a_prev, x_prev)
                h = h.extend(a_prev, x_prev)
            gammas[t] = g
            pays[t - 1] = self.net_payments(g)
        return gammas, pays

    def run(self, seed) -> GUMRun:
        rng = make_rng(seed)
        h = EMPTY
        steps = []
        for _ in range(self.T):
            a = self.protocol_action(h)
            x = self.env.sample(h, a, rng)
            steps.append((a, x))
            h = h.extend(a, x)
        return self._finish(h, steps)

    def _finish(self, h, steps):
        gammas, pays = self.transfers_along(steps)
        rewards = np.array([[x[i][1] for i in range(self.k)] for _, x in steps]).sum(axis=0)
        utilities = rewards + pays.sum(axis=0)
        return GUMRun(h, gammas, pays, rewards, utilities)

    def trajectories(self):
        """Every realisable trajectory under the reports, with its probability."""
        out = []

        def walk(h, steps, prob):
            if len(h) == self.T:
                out.append((steps, prob))
                return
            a = self.protocol_action(h)
            for x, p in self.env.percept_dist(h, a):
                walk(h.extend(a, x), steps + [(a, x)], prob * p)

        walk(EMPTY, [], 1.0)
        return out

    def expected_utilities(self):
        """Exact ``E[U^i]`` by enumerating trajectories."""
        total = np.zeros(self.k)
        for steps, prob in self.trajectories():
            h = EMPTY
            for a, x in steps:
                h = h.extend(a, x)
            total += prob * self._finish(h, steps).utilities
        return total

    def guaranteed(self, i):
        """``Upsilon^i_1`` with everyone truthful: the utility a truthful agent i is promised."""
        return self.upsilon(i, 1, n_reported=0)


def gum_run(env, T, reports=None, seed=0, horizons=None):
    """Run once and return ``(gum, run)``; ``run.utilities`` holds each ``U^i``."""
    g = GUM(env, T, reports, horizons=horizons)
    return g, g.run(seed)


def gum_martingale_check(env, reports, t, j, T=None, gum=None) -> float:
    """Largest residual of the stage-``t`` martingale identity for agent ``j``.

    At every reachable partial history and every refinement level ``l``,
    compares ``E_{o_l}[Upsilon^j(prefix + o_l, l) + P_l]`` with
    ``Upsilon^j(prefix, l - 1) + P_{l-1}``, where ``P_l`` is the part of
    agent j's stage-t transfer attributed to levels ``1..l``. The identity
    holds whenever agent ``j`` reports truthfully.
    """
    g = gum if gum is not None else GUM(env, T, reports)
    k = g.k

    def split(gamma, lvl):
        # part of j's stage payment attributable to agent lvl (0-based)
        if lvl == j:
            return float(sum(gamma[j, m] for m in range(k) if m != j))
        return float(-gamma[lvl, j])

    def check_at(h_prev, a_prev):
        worst = 0.0
        if t == 1:
            U = g._upsilon_levels(1, None, None, None)
            gamma = U[1:] - U[:-1]
            cum = 0.0
            for lvl in range(1, k + 1):
                lhs = U[lvl, j] + cum + split(gamma, lvl - 1)
                rhs = U[lvl - 1, j] + cum
                worst = max(worst, abs(lhs - rhs))
                cum += split(gamma, lvl - 1)
            return worst
        prefixes = {()}
        for lvl in range(1, k + 1):
            nxt = set()
            for pre in prefixes:
                comps = g._completions(h_prev, a_prev, pre)
                if not comps:
                    continue
                base_U = g.upsilon(j, t, h_prev, a_prev, pre, lvl - 1)
                base_P = _cum_split(g, t, h_prev, a_prev, pre, lvl - 1, split)
                mass = {}
                for x, p in comps:
                    mass[x[lvl - 1]] = mass.get(x[lvl - 1], 0.0) + p
                lhs = 0.0
                for o, po in mass.items():
                    ext = pre + (o,)
                    lhs += po * (g.upsilon(j, t, h_prev, a_prev, ext, lvl)
                                 + _cum_split(g, t, h_prev, a_prev, ext, lvl, split))
                    nxt.add(ext)
                worst = max(worst, abs(lhs - (base_U + base_P)))
            prefixes = nxt
        return worst

    worst = 0.0
    if t == 1:
        return check_at(None, None)
    for steps, _ in _prefix_trajectories(g, t - 2):
        h_prev = EMPTY
        for a, x in steps:
            h_prev = h_prev.extend(a, x)
        worst = max(worst, check_at(h_prev, g.protocol_action(h_prev)))
    return worst


def _cum_split(g, t, h_prev, a_prev, prefix, lvl, split):
    """Sum of the first ``lvl`` split parts of agent j's stage-t transfer given revealed ``prefix``."""
    if lvl == 0:
        return 0.0
    U = np.empty((lvl + 1, g.k))
    for m in range(lvl + 1):
        for jj in range(g.k):
            U[m, jj] = g.upsilon(jj, t, h_prev, a_prev, prefix[:m], m)
    gamma = np.zeros((g.k, g.k))
    gamma[:lvl] = U[1:] - U[:-1]
    return sum(split(gamma, m) for m in range(lvl))


def _prefix_trajectories(g, length):
    out = []

    def walk(h, steps, prob):
        if len(h) == length:
            out.append((steps, prob))
            return
        a = g.protocol_action(h)
        for x, p in g.env.percept_dist(h, a):
            walk(h.extend(a, x), steps + [(a, x)], prob * p)

    walk(EMPTY, [], 1.0)
    return out
