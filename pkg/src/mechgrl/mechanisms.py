"""Social choice and payment rules: Clark-pivot VCG and the exponential VCG mechanism.

Valuations are dense tables over an indexed feasible set ``Alt``. All
randomness comes from a caller-supplied ``numpy.random.Generator`` so that
a protocol run can thread a single stream through every stochastic choice.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from itertools import product

import numpy as np

from .actions import JointActionSet, action_key, parse_action_key
from .errors import ContractError, DomainError, RangeWarning
from .validation import check_distribution, check_positive

TIE_TOL = 1e-12


class ValuationTable:
    """One agent's declared value for every joint action in ``alt``."""

    __slots__ = ("alt", "values")

    def __init__(self, alt: JointActionSet, values):
        values = np.array(values, dtype=float).reshape(-1)
        if values.shape != (len(alt),):
            raise ContractError(f"valuation has {values.size} entries but the action set has {len(alt)}")
        if not np.all(np.isfinite(values)):
            raise DomainError("valuation contains non-finite values")
        self.alt = alt
        self.values = values

    @classmethod
    def from_mapping(cls, alt: JointActionSet, mapping):
        """Build from ``{joint_action or action_key: value}``; must be total on ``alt``."""
        vals = np.empty(len(alt))
        seen = set()
        for a, v in mapping.items():
            act = parse_action_key(a, alt) if isinstance(a, str) else tuple(a)
            n = alt.position(act)
            vals[n] = v
            seen.add(n)
        if len(seen) != len(alt):
            missing = [action_key(alt[n]) for n in range(len(alt)) if n not in seen]
            raise ContractError(f"valuation is not total on the action set; missing {missing}")
        return cls(alt, vals)

    @classmethod
    def zeros(cls, alt):
        return cls(alt, np.zeros(len(alt)))

    @classmethod
    def point(cls, alt, action, value):
        """Value ``value`` on ``action`` and 0 elsewhere (a single bid)."""
        vals = np.zeros(len(alt))
        vals[alt.position(action)] = value
        return cls(alt, vals)

    def __getitem__(self, a):
        return float(self.values[self.alt.position(a)])

    def __len__(self):
        return len(self.values)

    def __eq__(self, other):
        return (isinstance(other, ValuationTable) and self.alt == other.alt
                and np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"ValuationTable({self.as_dict()})"

    def as_dict(self):
        return {action_key(a): float(v) for a, v in zip(self.alt, self.values)}

    def is_nonnegative(self, tol=0.0) -> bool:
        return bool(np.all(self.values >= -tol))

    def replace(self, values):
        return ValuationTable(self.alt, values)


@dataclass(frozen=True)
class MechanismOutcome:
    chosen: tuple
    payments: tuple | None
    tie_set: tuple
    distribution: tuple | None = None

    def __post_init__(self):
        if not self.tie_set or self.chosen not in self.tie_set:
            raise ContractError("chosen action must belong to a non-empty tie set")


def stack_valuations(valuations, alt=None):
    """Return ``(alt, V)`` with ``V[i, n]`` agent i's value for the n-th action."""
    valuations = list(valuations)
    if not valuations:
        raise ContractError("at least one valuation table is required")
    alt = valuations[0].alt if alt is None else alt
    if len(alt) == 0:
        raise DomainError("empty feasible action set")
    for i, v in enumerate(valuations):
        if v.alt is not alt and v.alt != alt:
            raise ContractError(f"valuation {i} is declared on a different action set")
    return alt, np.vstack([v.values for v in valuations])


def argmax_set(welfare, tol=TIE_TOL):
    """Indices attaining the maximum of ``welfare`` within ``tol``, in order."""
    welfare = np.asarray(welfare, dtype=float)
    return np.flatnonzero(welfare >= welfare.max() - tol)


def vcg_choose(valuations, alt=None, rng=None) -> MechanismOutcome:
    """Welfare-maximising choice; ties broken uniformly with ``rng``.

    Without an ``rng`` the first maximiser in the canonical order of ``alt``
    is chosen (the deterministic rule used inside the exact oracles).
    """
    alt, V = stack_valuations(valuations, alt)
    ties = argmax_set(V.sum(axis=0))
    if rng is not None and ties.size > 1:
        n = int(ties[rng.integers(ties.size)])
    else:
        n = int(ties[0])
    return MechanismOutcome(alt[n], None, tuple(alt[j] for j in ties))


def clark_payments(valuations, chosen):
    """Clark pivot payments ``max_b sum_{j!=i} v_j(b) - sum_{j!=i} v_j(chosen)``."""
    alt, V = stack_valuations(valuations)
    n = alt.position(chosen)
    others = V.sum(axis=0)[None, :] - V
    # max over b includes b = chosen, so each payment is >= 0 exactly
    return [float(x) for x in others.max(axis=1) - others[:, n]]


class ClarkVCG:
    """VCG with Clark pivot payments, usable as a protocol mechanism."""

    name = "clark-vcg"

    def __call__(self, valuations, rng=None) -> MechanismOutcome:
        out = vcg_choose(valuations, rng=rng)
        return MechanismOutcome(out.chosen, tuple(clark_payments(valuations, out.chosen)), out.tie_set)

    def get_params(self, deep=True):
        return {}

    def __repr__(self):
        return "ClarkVCG()"


@dataclass(frozen=True)
class ExpVCGConfig:
    """Privacy parameter ``epsilon`` and welfare sensitivity ``sensitivity``."""

    epsilon: float
    sensitivity: float = 1.0

    def __post_init__(self):
        check_positive("epsilon", self.epsilon)
        check_positive("sensitivity", self.sensitivity)

    @property
    def beta(self):
        """Inverse temperature of the sampling distribution."""
        return self.epsilon / (2.0 * self.sensitivity)


def _as_matrix(valuations):
    if isinstance(valuations, np.ndarray):
        V = np.atleast_2d(np.asarray(valuations, dtype=float))
    else:
        _, V = stack_valuations(valuations)
    return V


def _flag_range(V, cfg):
    if np.any(V < 0) or np.any(V > cfg.sensitivity):
        warnings.warn("valuations outside [0, sensitivity]; the privacy and IR guarantees assume bounded values",
                      RangeWarning, stacklevel=3)


def _logsumexp(x):
    m = np.max(x)
    return float(m + np.log(np.sum(np.exp(x - m))))


def entropy(p) -> float:
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def kl_divergence(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    mask = p > 0
    if np.any(q[mask] <= 0):
        return float("inf")
    return float((p[mask] * (np.log(p[mask]) - np.log(q[mask]))).sum())


def exp_mech_distribution(valuations, cfg: ExpVCGConfig, check_range=True):
    """Softmax of ``(eps / 2 sensitivity) * welfare`` over ``Alt`` (max-shifted)."""
    V = _as_matrix(valuations)
    if check_range:
        _flag_range(V, cfg)
    z = cfg.beta * V.sum(axis=0)
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


def exp_mech_sample(valuations, cfg: ExpVCGConfig, rng):
    alt, _ = stack_valuations(valuations)
    p = exp_mech_distribution(valuations, cfg)
    return alt[int(rng.choice(len(alt), p=p))]


def soft_welfare(valuations, cfg: ExpVCGConfig, exclude=None) -> float:
    """``(1/beta) ln sum_r exp(beta * sum_j v_j(r))``, optionally without agent ``exclude``."""
    V = _as_matrix(valuations)
    if exclude is not None:
        V = np.delete(V, exclude, axis=0)
    if V.shape[0] == 0:
        return _logsumexp(np.zeros(V.shape[1])) / cfg.beta
    return _logsumexp(cfg.beta * V.sum(axis=0)) / cfg.beta


def exp_vcg_payments(valuations, cfg: ExpVCGConfig, check_range=True):
    """Entropy-adjusted pivot payments of the exponential VCG mechanism."""
    V = _as_matrix(valuations)
    p = exp_mech_distribution(V, cfg, check_range=check_range)
    h = entropy(p)
    total = V.sum(axis=0)
    pays = []
    for i in range(V.shape[0]):
        others = total - V[i]
        pays.append(float(-(p @ others) - h / cfg.beta + _logsumexp(cfg.beta * others) / cfg.beta))
    return pays


def gibbs_welfare(xi, valuations, epsilon, sensitivity=1.0) -> float:
    """Expected declared welfare under ``xi`` plus the entropy bonus."""
    V = _as_matrix(valuations)
    xi = check_distribution("xi", xi)
    if xi.size != V.shape[1]:
        raise DomainError("xi must have one entry per joint action")
    beta = ExpVCGConfig(epsilon, sensitivity).beta
    return float(xi @ V.sum(axis=0) + entropy(xi) / beta)


def exp_vcg_expected_utility(true_value, valuations, i, cfg: ExpVCGConfig) -> float:
    """Agent ``i``'s expected utility when the declared profile is ``valuations``."""
    V = _as_matrix(valuations)
    true_value = np.asarray(getattr(true_value, "values", true_value), dtype=float)
    p = exp_mech_distribution(V, cfg, check_range=False)
    return float(p @ true_value - exp_vcg_payments(V, cfg, check_range=False)[i])


class ExponentialVCG:
    """Exponential mechanism for the choice plus entropy-adjusted payments."""

    name = "exp-vcg"

    def __init__(self, epsilon=1.0, sensitivity=1.0):
        self.epsilon = epsilon
        self.sensitivity = sensitivity
        self.config = ExpVCGConfig(epsilon, sensitivity)

    def __call__(self, valuations, rng=None) -> MechanismOutcome:
        if rng is None:
            raise ContractError("the exponential mechanism needs a random generator")
        alt, V = stack_valuations(valuations)
        p = exp_mech_distribution(V, self.config)
        n = int(rng.choice(len(alt), p=p))
        pays = exp_vcg_payments(V, self.config, check_range=False)
        return MechanismOutcome(alt[n], tuple(pays), tuple(alt), tuple(float(x) for x in p))

    def get_params(self, deep=True):
        return {"epsilon": self.epsilon, "sensitivity": self.sensitivity}

    def __repr__(self):
        return f"ExponentialVCG(epsilon={self.epsilon}, sensitivity={self.sensitivity})"


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def dp_ratio_check(cfg: ExpVCGConfig, alt=3, trials=None, n_agents=2, grid=(0.0, 0.5, 1.0), seed=0) -> float:
    """Largest ``|log P(r|v) - log P(r|v')|`` over neighbouring profiles.

    Neighbours differ in exactly one agent's table. With ``trials=None`` all
    profiles with entries from ``grid`` are enumerated; otherwise ``trials``
    random neighbouring pairs with entries in ``[0, sensitivity]`` are drawn.
    """
    n = alt if isinstance(alt, int) else len(alt)
    if trials is None:
        g = np.asarray(grid, dtype=float)
        tables = np.array(list(product(g, repeat=n)))  # (G**n, n)
        m = tables.shape[0]
        idx = np.indices((m,) * n_agents).reshape(n_agents, -1)
        welfare = tables[idx].sum(axis=0)  # (m**k, n)
        logp = _log_softmax(cfg.beta * welfare).reshape((m,) * n_agents + (n,))
        worst = 0.0
        for i in range(n_agents):
            worst = max(worst, float(np.ptp(logp, axis=i).max()))
        return worst
    rng = np.random.default_rng(seed)
    v = rng.uniform(0, cfg.sensitivity, size=(trials, n_agents, n))
    w = v.copy()
    who = rng.integers(n_agents, size=trials)
    w[np.arange(trials), who] = rng.uniform(0, cfg.sensitivity, size=(trials, n))
    a = _log_softmax(cfg.beta * v.sum(axis=1))
    b = _log_softmax(cfg.beta * w.sum(axis=1))
    return float(np.abs(a - b).max())


def profile_to_json(valuations, ids=None) -> dict:
    ids = list(range(len(valuations))) if ids is None else list(ids)
    return {"agents": [{"id": aid, "values": v.as_dict()} for aid, v in zip(ids, valuations)]}


def profile_from_json(obj, alt: JointActionSet | None = None):
    """Parse ``{agents: [{id, values}]}``; returns ``(ids, tables)``.

    Without ``alt`` the feasible set is taken from the first agent's keys in
    file order.
    """
    if isinstance(obj, str):
        obj = json.loads(obj)
    try:
        agents = obj["agents"]
    except (KeyError, TypeError):
        raise ContractError("valuation profile must be an object with an 'agents' list") from None
    if not agents:
        raise ContractError("valuation profile lists no agents")
    if alt is None:
        alt = JointActionSet([parse_action_key(k) for k in agents[0]["values"]])
    ids = [a.get("id", n) for n, a in enumerate(agents)]
    return ids, [ValuationTable.from_mapping(alt, a["values"]) for a in agents]
