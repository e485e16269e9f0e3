"""Abstract-MDP specialists: a state abstraction, a tabular model and a policy.

The model factorises as ``P(s' | s, a) * P(rp | s, a, s')`` where ``rp`` is
a (reward, payment) pair binned onto a declared finite grid. Both factors
are KT estimates from counts unless fixed tables are supplied.
"""
from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .kt import kt_distribution


class Specialist:
    """Tabular abstract environment model with its own policy and planning horizon.

    Args:
        psi: maps the agent's step log (tuple of ``(action, obs, reward, payment)``)
            to an abstract state in ``states``.
        states: abstract state space.
        actions: joint actions, in the order of the valuation tables.
        rp_grid: list of ``(reward, payment)`` bins.
        policy: mapping or callable from state to action.
        horizon: number of steps valued, including the current one.
        transition: optional fixed ``(S, A, S)`` array.
        reward_payment: optional fixed ``(S, A, S, G)`` array.
    """

    def __init__(self, psi, states, actions, rp_grid, policy, horizon, transition=None,
                 reward_payment=None, name=None):
        self.psi = psi
        self.states = list(states)
        self.actions = [tuple(a) for a in actions]
        self.grid = np.asarray(rp_grid, dtype=float).reshape(-1, 2)
        self.horizon = int(horizon)
        self.name = name
        self._s = {s: n for n, s in enumerate(self.states)}
        self._a = {a: n for n, a in enumerate(self.actions)}
        S, A, G = len(self.states), len(self.actions), len(self.grid)
        pol = policy if callable(policy) else policy.__getitem__
        self.policy_index = np.array([self._a[tuple(pol(s))] for s in self.states], dtype=int)
        self.fixed_transition = None if transition is None else self._check(transition, (S, A, S))
        self.fixed_rp = None if reward_payment is None else self._check(reward_payment, (S, A, S, G))
        self.trans_counts = np.zeros((S, A, S))
        self.rp_counts = np.zeros((S, A, S, G))
        self.utility = self.grid[:, 0] - self.grid[:, 1]
        self._q_cache = None

    @staticmethod
    def _check(arr, shape):
        arr = np.asarray(arr, dtype=float)
        if arr.shape != shape:
            raise ContractError(f"fixed model has shape {arr.shape}, expected {shape}")
        if np.any(arr < 0) or np.any(np.abs(arr.sum(axis=-1) - 1) > 1e-9):
            raise ContractError("fixed model rows must be probability distributions")
        return arr

    def state_index(self, s):
        try:
            return self._s[s]
        except KeyError:
            raise ContractError(f"abstraction produced unknown state {s!r}") from None

    def state_of(self, log):
        return self.state_index(self.psi(tuple(log)))

    def bin_of(self, reward, payment):
        d = (self.grid[:, 0] - reward) ** 2 + (self.grid[:, 1] - payment) ** 2
        return int(np.argmin(d))

    def transition_probs(self):
        return self.fixed_transition if self.fixed_transition is not None else kt_distribution(self.trans_counts)

    def rp_probs(self):
        return self.fixed_rp if self.fixed_rp is not None else kt_distribution(self.rp_counts)

    def predict(self, s, a, s_next, reward, payment):
        """``rho(rp | s, a, s')`` for the bin containing ``(reward, payment)``."""
        return float(self.rp_probs()[s, self._a[tuple(a)], s_next, self.bin_of(reward, payment)])

    def update(self, s, a, s_next, reward, payment):
        ai = self._a[tuple(a)]
        if self.fixed_transition is None:
            self.trans_counts[s, ai, s_next] += 1
        if self.fixed_rp is None:
            self.rp_counts[s, ai, s_next, self.bin_of(reward, payment)] += 1
        self._q_cache = None

    def q_values(self):
        """``Q[s, a]``: expected reward minus payment over ``horizon`` steps, ``a`` now then the policy."""
        if self._q_cache is not None:
            return self._q_cache
        P = self.transition_probs()
        u = self.rp_probs() @ self.utility  # (S, A, S)
        step = (P * u).sum(axis=-1)  # (S, A)
        S = len(self.states)
        V = np.zeros(S)
        Q = np.zeros_like(step)
        for _ in range(self.horizon):
            Q = step + P @ V
            V = Q[np.arange(S), self.policy_index]
        self._q_cache = Q
        return Q


def specialist_value(sp: Specialist, log, a) -> float:
    """Value of taking joint action ``a`` now in the abstract state of ``log``."""
    return float(sp.q_values()[sp.state_of(log), sp._a[tuple(a)]])
