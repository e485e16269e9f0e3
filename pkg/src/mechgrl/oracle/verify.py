"""Incentive-compatibility and individual-rationality sweeps over oracle tables."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..mechanisms import TIE_TOL

IC_TOL = 1e-9
MAX_WITNESSES = 100


@dataclass
class VerificationReport:
    """Violations found by a sweep; ``witnesses`` keeps the first few in full."""

    name: str
    checked: int = 0
    violations: int = 0
    witnesses: list = field(default_factory=list)
    out_of_hypothesis: int = 0

    @property
    def ok(self):
        return self.violations == 0

    def add(self, witness):
        self.violations += 1
        if len(self.witnesses) < MAX_WITNESSES:
            self.witnesses.append(witness)

    def merge(self, other):
        self.checked += other.checked
        self.out_of_hypothesis += other.out_of_hypothesis
        for w in other.witnesses:
            if len(self.witnesses) < MAX_WITNESSES:
                self.witnesses.append(w)
        self.violations += other.violations
        return self

    def to_json(self):
        return {"name": self.name, "ok": self.ok, "checked": self.checked, "violations": self.violations,
                "out_of_hypothesis": self.out_of_hypothesis, "witnesses": self.witnesses}


def sample_misreports(truth, count, rng, scale=None):
    """Structured attacks on ``truth`` followed by random perturbations, ``count`` rows total.

    Structured rows: constant shifts, rescalings, +1/-1 on each single
    action, zero table, and swapping the argmax with every other entry.
    """
    truth = np.asarray(truth, dtype=float)
    n = truth.size
    if scale is None:
        scale = max(1.0, float(np.abs(truth).max()))
    rows = []
    for s in (-1.0, 1.0, 0.5 * scale):
        rows.append(truth + s)
    for f in (0.0, 0.5, 2.0, -1.0):
        rows.append(truth * f)
    for j in range(n):
        for d in (1.0, -1.0, scale):
            r = truth.copy()
            r[j] += d
            rows.append(r)
    top = int(np.argmax(truth))
    for j in range(n):
        if j != top:
            r = truth.copy()
            r[top], r[j] = r[j], r[top]
            rows.append(r)
    rows = rows[:count]
    rest = count - len(rows)
    if rest > 0:
        half = rest // 2
        noise = truth + rng.normal(0.0, 0.25 * scale, size=(half, n))
        uniform = rng.uniform(truth.min() - scale, truth.max() + scale, size=(rest - half, n))
        rows.extend(noise)
        rows.extend(uniform)
    return np.vstack(rows) if rows else np.zeros((0, n))


def _first_max_rows(W):
    return np.argmax(W >= W.max(axis=1, keepdims=True) - TIE_TOL, axis=1)


def _continuation(env, tables, nd, i):
    """``E[r_i + q_bar_{t+1,i} - c_bar_{t+1,i}]`` for every action, summed over percepts."""
    out = np.zeros(len(env.alt))
    for n, a in enumerate(env.alt):
        for x, p in env.percept_dist(nd.h, a):
            child = nd.h.extend(a, x)
            out[n] += p * (x[i][1] + tables.q_bar(i, child) - tables.c_bar(i, child))
    return out


def check_bayes_nash_ic(env, tables, misreports_per_agent=200, seed=0) -> VerificationReport:
    """Truthful declaration must beat every sampled misreport at every node and agent."""
    rng = np.random.default_rng(seed)
    report = VerificationReport("ic")
    keys = env.alt.keys()
    for h, nd in tables.nodes.items():
        D = nd.declared
        welfare = D.sum(axis=0)
        for i in range(env.k):
            if nd.t > tables.horizons[i]:
                continue
            g = _continuation(env, tables, nd, i)
            others = welfare - D[i]
            best_others = others.max()
            truthful = g[nd.chosen] - (best_others - others[nd.chosen])
            M = sample_misreports(D[i], misreports_per_agent, rng)
            picks = _first_max_rows(M + others[None, :])
            cu = g[picks] - (best_others - others[picks])
            report.checked += len(M)
            bad = np.flatnonzero(cu > truthful + IC_TOL)
            for b in bad:
                report.add({
                    "t": nd.t, "history": h.key(), "agent": i + 1,
                    "truthful": dict(zip(keys, map(float, D[i]))),
                    "misreport": dict(zip(keys, map(float, M[b]))),
                    "truthful_cu": float(truthful), "misreport_cu": float(cu[b]),
                    "truthful_action": keys[nd.chosen], "misreport_action": keys[int(picks[b])],
                })
    return report


def check_ir(env, tables, tol=1e-9) -> VerificationReport:
    """Truthful realisable utility must be non-negative wherever the agent's declared row is.

    Nodes where an agent's declaration has a negative entry fall outside the
    hypothesis and are counted in ``out_of_hypothesis`` instead of checked.
    """
    report = VerificationReport("ir")
    for h, nd in tables.nodes.items():
        D = nd.declared
        for i in range(env.k):
            if nd.t > tables.horizons[i]:
                continue
            if np.any(D[i] < -1e-12):
                report.out_of_hypothesis += 1
                continue
            g = _continuation(env, tables, nd, i)
            cu = g[nd.chosen] - nd.payments[i]
            report.checked += 1
            if cu < -tol:
                report.add({"t": nd.t, "history": h.key(), "agent": i + 1, "truthful_cu": float(cu)})
    return report
