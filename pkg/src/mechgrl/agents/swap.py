"""Swap-regret minimisation by the master reduction over N Hedge sub-learners.

Sub-learner ``l`` proposes a distribution ``Q[l]`` over actions; the master
plays the stationary distribution ``p = p Q`` and charges sub-learner ``l``
the loss vector scaled by ``p[l]``.
"""
from __future__ import annotations

import numpy as np

from ..errors import DomainError
from ..validation import check_positive, check_stochastic_rows


def swap_fixed_point(Q, method="lstsq", tol=1e-10, damping=1e-6, max_iter=100_000):
    """Stationary distribution ``p = p Q`` of a row-stochastic matrix.

    ``lstsq`` solves ``p (Q - I) = 0, sum p = 1`` exactly; on reducible
    chains the minimum-norm solution spreads mass over the closed classes,
    which keeps ties close to uniform. ``power`` iterates ``p <- p Q'`` with
    ``Q' = (1 - damping) Q + damping / N`` until the L1 change is below
    ``tol``.
    """
    Q = check_stochastic_rows("Q", Q)
    n = Q.shape[0]
    if n == 1:
        return np.ones(1)
    if n == 2 and method == "lstsq":
        # closed form of the same linear system
        a, b = Q[0, 1], Q[1, 0]
        if a + b <= 0:
            return np.full(2, 0.5)
        return np.array([b, a]) / (a + b)
    if method == "lstsq":
        A = np.vstack([Q.T - np.eye(n), np.ones((1, n))])
        b = np.zeros(n + 1)
        b[-1] = 1.0
        p = np.linalg.lstsq(A, b, rcond=None)[0]
        p = np.clip(p, 0.0, None)
        s = p.sum()
        if s > 0:
            p /= s
            if np.abs(p @ Q - p).sum() <= 1e-9:
                return p
        method = "power"  # numerical trouble: fall back
    if method != "power":
        raise DomainError(f"unknown fixed-point method {method!r}")
    D = (1.0 - damping) * Q + damping / n
    p = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = p @ D
        if np.abs(nxt - p).sum() <= tol:
            return nxt / nxt.sum()
        p = nxt
    return p / p.sum()


class SwapMaster:
    """N Hedge sub-learners, one per action, combined through ``p = p Q``."""

    def __init__(self, n_actions, eta=0.1):
        if n_actions < 1:
            raise DomainError("need at least one action")
        check_positive("eta", eta)
        self.n = int(n_actions)
        self.eta = float(eta)
        self.log_weights = np.zeros((self.n, self.n))
        self.p = np.full(self.n, 1.0 / self.n)

    @property
    def Q(self):
        lw = self.log_weights - self.log_weights.max(axis=1, keepdims=True)
        w = np.exp(lw)
        return w / w.sum(axis=1, keepdims=True)

    def residual(self):
        return float(np.abs(self.p @ self.Q - self.p).sum())

    def act(self, rng):
        u = rng.random()
        return min(int(np.searchsorted(np.cumsum(self.p), u, side="right")), self.n - 1)


def swap_master_step(master: SwapMaster, loss_vector):
    """Charge every sub-learner its share of ``loss_vector``; returns ``(master, p)`` with the new ``p``."""
    loss = np.asarray(loss_vector, dtype=float)
    if loss.shape != (master.n,):
        raise DomainError(f"loss vector must have length {master.n}")
    master.log_weights -= master.eta * np.outer(master.p, loss)
    master.p = swap_fixed_point(master.Q)
    return master, master.p


def empirical_swap_regret(actions, loss_vectors):
    """Per-round swap regret of a played sequence: ``max_phi sum_t l_t(a_t) - l_t(phi(a_t))`` over T."""
    actions = np.asarray(actions, dtype=int)
    L = np.asarray(loss_vectors, dtype=float)
    n = L.shape[1]
    total = 0.0
    for a in range(n):
        rows = L[actions == a]
        if rows.size:
            col = rows.sum(axis=0)
            total += col[a] - col.min()
    return total / len(actions)


def ce_violation(joint, losses):
    """Largest violation of the correlated-equilibrium constraints of a two-player game.

    ``joint[a1, a2]`` is a distribution and ``losses[i][a1, a2]`` player i's
    loss. For each player, recommended action ``a`` and deviation ``b``
    the gain ``sum_{a_-i} joint(a, a_-i) (l_i(a, a_-i) - l_i(b, a_-i))``
    must be at most 0; the maximum gain (or 0) is returned.
    """
    J = np.asarray(joint, dtype=float)
    worst = 0.0
    L1, L2 = (np.asarray(x, dtype=float) for x in losses)
    n1, n2 = J.shape
    for a in range(n1):
        for b in range(n1):
            worst = max(worst, float((J[a] * (L1[a] - L1[b])).sum()))
    for a in range(n2):
        for b in range(n2):
            worst = max(worst, float((J[:, a] * (L2[:, a] - L2[:, b])).sum()))
    return worst


MATCHING_PENNIES = (np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([[1.0, 0.0], [0.0, 1.0]]))


def matching_pennies_selfplay(rounds, seed=0, eta=None, losses=MATCHING_PENNIES):
    """Two swap masters playing a 2x2 game with full-information feedback.

    Returns a dict with both action logs, loss-vector logs, per-round swap
    regret, the empirical joint distribution over the last half and the
    largest fixed-point residual seen.
    """
    L1, L2 = losses
    rng = np.random.default_rng(seed)
    if eta is None:
        # sub-learners only see a p-share of each loss, so run hotter than plain Hedge
        eta = 4.0 * float(np.sqrt(8 * np.log(2) / rounds))
    m1, m2 = SwapMaster(L1.shape[0], eta), SwapMaster(L1.shape[1], eta)
    acts = np.zeros((rounds, 2), dtype=int)
    lv1 = np.zeros((rounds, L1.shape[0]))
    lv2 = np.zeros((rounds, L1.shape[1]))
    worst_res = 0.0
    for t in range(rounds):
        a1, a2 = m1.act(rng), m2.act(rng)
        acts[t] = a1, a2
        lv1[t] = L1[:, a2]
        lv2[t] = L2[a1, :]
        swap_master_step(m1, lv1[t])
        swap_master_step(m2, lv2[t])
        worst_res = max(worst_res, m1.residual(), m2.residual())
    half = acts[rounds // 2:]
    joint = np.zeros(L1.shape)
    np.add.at(joint, (half[:, 0], half[:, 1]), 1.0)
    joint /= len(half)
    return {
        "actions": acts, "losses1": lv1, "losses2": lv2,
        "swap_regret": (empirical_swap_regret(acts[:, 0], lv1), empirical_swap_regret(acts[:, 1], lv2)),
        "joint": joint, "ce_violation": ce_violation(joint, losses), "max_residual": worst_res,
    }
