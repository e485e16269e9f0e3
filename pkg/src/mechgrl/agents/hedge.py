"""Hedge with specialists that may arrive and depart.

Weights are kept as log-weights so long loss streams do not underflow.
With learning rate 1 and log loss the normalised weights are exactly the
Bayesian posterior over the specialists.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ContractError, DomainError
from ..validation import check_positive

LOSS_CAP = 1e6


@dataclass(frozen=True)
class HedgeState:
    eta: float
    priors: dict
    log_weights: dict
    cum_loss: float
    active: frozenset

    @property
    def weights(self):
        return {i: math.exp(lw) for i, lw in self.log_weights.items()}

    def normalized(self):
        """Normalised weights over the active set."""
        ids = sorted(self.active, key=repr)
        if not ids:
            return {}
        lw = np.array([self.log_weights[i] for i in ids])
        w = np.exp(lw - lw.max())
        w /= w.sum()
        return dict(zip(ids, w.tolist()))


def hedge_init(priors, eta=1.0, active=None) -> HedgeState:
    """Start with weights equal to the priors for the initially active specialists."""
    check_positive("eta", eta)
    priors = dict(priors)
    for i, nu in priors.items():
        if not nu > 0:
            raise DomainError(f"prior of specialist {i!r} must be positive")
    active = frozenset(priors if active is None else active)
    return HedgeState(float(eta), priors, {i: math.log(priors[i]) for i in active}, 0.0, active)


def mixture_log_loss(state: HedgeState, losses) -> float:
    """``-ln sum_i w_hat_i exp(-loss_i)``: log loss of the mixture when ``losses`` are log losses."""
    w = state.normalized()
    ls = np.array([min(float(losses[i]), LOSS_CAP) for i in w])
    ws = np.array(list(w.values()))
    m = (-ls).max()
    return float(-(m + math.log(float((ws * np.exp(-ls - m)).sum()))))


def hedge_step(state: HedgeState, losses, arrivals=(), departures=(), mixture_loss=None) -> HedgeState:
    """One round of the specialists update.

    ``losses`` must cover the active set. The cumulative loss ``L`` advances
    by the mixture loss (log loss of the mixture unless given), survivors are
    decayed by ``exp(-eta * loss)``, and arrivals (ids, or a mapping
    id -> prior) start at ``prior * exp(-eta * L)`` with the updated ``L``.
    """
    missing = [i for i in state.active if i not in losses]
    if missing:
        raise ContractError(f"no loss given for active specialist(s) {sorted(missing, key=repr)}")
    if mixture_loss is None:
        mixture_loss = mixture_log_loss(state, losses)
    L = state.cum_loss + float(mixture_loss)
    departures = frozenset(departures)
    log_w = {}
    for i in state.active - departures:
        log_w[i] = state.log_weights[i] - state.eta * min(float(losses[i]), LOSS_CAP)
    priors = dict(state.priors)
    if isinstance(arrivals, dict):
        priors.update(arrivals)
        arrivals = arrivals.keys()
    new = set()
    for i in arrivals:
        if i in state.active:
            continue
        nu = priors.get(i)
        if nu is None or not nu > 0:
            raise ContractError(f"arriving specialist {i!r} has no positive prior")
        log_w[i] = math.log(nu) - state.eta * L
        new.add(i)
    active = (state.active - departures) | frozenset(new)
    return replace(state, priors=priors, log_weights=log_w, cum_loss=L, active=active)


def bayes_mixture_squared_error(models, priors, true_index, steps):
    """Expected cumulative squared one-step prediction error of the Bayes mixture.

    ``models`` are callables ``model(prefix) -> probability vector`` over a
    finite alphabet for the next symbol given the tuple ``prefix``. The
    mixture is tracked with learning-rate-1 Hedge on log loss. Returns
    ``sum_t E_mu[ sum_x (mu(x|prefix) - xi(x|prefix))**2 ]`` with ``mu`` the
    true model, computed by enumerating every sequence.
    """
    ids = list(range(len(models)))
    start = hedge_init(dict(zip(ids, priors)), eta=1.0)
    total = 0.0
    stack = [((), 1.0, start)]
    while stack:
        prefix, prob, st = stack.pop()
        if len(prefix) == steps or prob == 0.0:
            continue
        preds = {i: np.asarray(models[i](prefix), dtype=float) for i in ids}
        w = st.normalized()
        xi = sum(w[i] * preds[i] for i in ids)
        mu = preds[true_index]
        total += prob * float(((mu - xi) ** 2).sum())
        for x, px in enumerate(mu):
            if px <= 0:
                continue
            losses = {i: (-math.log(preds[i][x]) if preds[i][x] > 0 else LOSS_CAP) for i in ids}
            stack.append((prefix + (x,), prob * px, hedge_step(st, losses)))
    return total
