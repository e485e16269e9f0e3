"""Hedge-weighted mixture of abstract-MDP specialists as a protocol agent."""
from __future__ import annotations

import math

import numpy as np

from ..envcore import AgentPolicy
from ..errors import ContractError
from ..mechanisms import ValuationTable
from .hedge import LOSS_CAP, hedge_init, hedge_step
from .specialist import Specialist


class DynamicHedgeAIXI(AgentPolicy):
    """Submits ``sum_i w_hat_i * V_i`` and reweights specialists by log loss on (reward, payment).

    Args:
        specialists: mapping id -> :class:`Specialist` (a list is keyed by position).
        priors: mapping id -> positive prior; defaults to uniform over ``specialists``.
        eta: Hedge learning rate.
        active: ids active at the start (default all).
        schedule: optional mapping ``t -> (arrivals, departures)`` applied
            after the step-``t`` update.

    The agent keeps its own log of ``(joint_action, observation, reward,
    payment)`` steps; specialists read their abstract state from that log.
    """

    def __init__(self, specialists, priors=None, eta=1.0, active=None, schedule=None):
        if not isinstance(specialists, dict):
            specialists = dict(enumerate(specialists))
        if not specialists:
            raise ContractError("at least one specialist is required")
        for sp in specialists.values():
            if not isinstance(sp, Specialist):
                raise ContractError("specialists must be Specialist instances")
        self.specialists = specialists
        if priors is None:
            priors = {i: 1.0 / len(specialists) for i in specialists}
        self.priors = dict(priors)
        self.eta = float(eta)
        self.initial_active = None if active is None else frozenset(active)
        self.schedule = dict(schedule or {})
        self._fresh()

    def _fresh(self):
        self.state = hedge_init(self.priors, self.eta, self.initial_active)
        self.log = []
        self.loss_log = []
        self.mixture_losses = []
        self._pre = None

    def reset(self, index, env, rng, visibility="own"):
        super().reset(index, env, rng, visibility)
        self._fresh()

    def values(self, sp_id, log=None):
        sp = self.specialists[sp_id]
        q = sp.q_values()[sp.state_of(self.log if log is None else log)]
        return np.array([q[sp._a[tuple(a)]] for a in self.env.alt])

    def mixture_values(self):
        w = self.state.normalized()
        return sum(wi * self.values(i) for i, wi in w.items())

    def declare(self, t, history) -> ValuationTable:
        self._pre = {i: self.specialists[i].state_of(self.log) for i in self.state.active}
        return ValuationTable(self.env.alt, self.mixture_values())

    def observe(self, view) -> None:
        obs, reward = view.percept[0]
        a, pay = tuple(view.chosen_action), float(view.payment)
        pre = self._pre if self._pre is not None else {
            i: self.specialists[i].state_of(self.log) for i in self.state.active}
        self.log.append((a, obs, float(reward), pay))
        losses, post = {}, {}
        for i in self.state.active:
            sp = self.specialists[i]
            post[i] = sp.state_of(self.log)
            p = sp.predict(pre[i], a, post[i], reward, pay)
            losses[i] = -math.log(p) if p > 0 else LOSS_CAP
        arrivals, departures = self.schedule.get(view.t, ((), ()))
        old = self.state
        self.state = hedge_step(old, losses, arrivals, departures)
        self.mixture_losses.append(self.state.cum_loss - old.cum_loss)
        self.loss_log.append(losses)
        for i, s_next in post.items():
            self.specialists[i].update(pre[i], a, s_next, reward, pay)
        self._pre = None


def dha_policy(state, specialists, schedule=None) -> DynamicHedgeAIXI:
    """Build the agent from an initial Hedge state (its priors, eta and active set)."""
    return DynamicHedgeAIXI(specialists, priors=state.priors, eta=state.eta, active=state.active,
                            schedule=schedule)
