"""Joint actions, their canonical string keys, and indexed feasible-action sets."""
from __future__ import annotations

from itertools import product

from .errors import DomainError

KEY_SEP = "|"


def action_key(action) -> str:
    """Canonical encoding ``"a1|a2|...|ak"`` of a joint action."""
    return KEY_SEP.join(str(a) for a in action)


def _parse_component(s):
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def parse_action_key(key: str, alt: "JointActionSet | None" = None):
    """Inverse of :func:`action_key`.

    With ``alt`` given the key is matched against the feasible set exactly,
    otherwise numeric-looking components are converted to int/float.
    """
    if alt is not None:
        try:
            return alt.by_key[key]
        except KeyError:
            raise DomainError(f"action key {key!r} is not in the feasible set") from None
    return tuple(_parse_component(s) for s in key.split(KEY_SEP))


class JointActionSet:
    """An ordered, indexed set ``Alt`` of feasible joint actions.

    The order given at construction is the canonical order used by the
    deterministic tie rule (first maximiser wins).
    """

    __slots__ = ("actions", "index", "by_key", "k", "action_sets")

    def __init__(self, actions, action_sets=None):
        actions = tuple(tuple(a) for a in actions)
        if not actions:
            raise DomainError("the feasible joint-action set is empty")
        k = len(actions[0])
        if k < 1 or any(len(a) != k for a in actions):
            raise DomainError("joint actions must all have the same length k >= 1")
        if action_sets is not None:
            action_sets = tuple(tuple(s) for s in action_sets)
            if len(action_sets) != k:
                raise DomainError(f"expected {k} per-agent action sets, got {len(action_sets)}")
            for a in actions:
                check_components(a, action_sets)
        self.actions = actions
        self.k = k
        self.action_sets = action_sets
        self.index = {a: n for n, a in enumerate(actions)}
        if len(self.index) != len(actions):
            raise DomainError("duplicate joint actions in the feasible set")
        self.by_key = {action_key(a): a for a in actions}

    @classmethod
    def product(cls, action_sets):
        """All combinations, in lexicographic order of the per-agent sets."""
        return cls(product(*action_sets), action_sets)

    @classmethod
    def exclusive(cls, k, on=1, off=0):
        """One-hot joint actions: exactly one agent takes action ``on``."""
        acts = [tuple(on if j == i else off for j in range(k)) for i in range(k)]
        return cls(acts, [(off, on)] * k)

    def __len__(self):
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    def __contains__(self, a):
        return a in self.index

    def __getitem__(self, n):
        return self.actions[n]

    def __eq__(self, other):
        return isinstance(other, JointActionSet) and self.actions == other.actions

    def __hash__(self):
        return hash(self.actions)

    def __repr__(self):
        return f"JointActionSet({[action_key(a) for a in self.actions]})"

    def position(self, a) -> int:
        try:
            return self.index[a]
        except (KeyError, TypeError):
            raise DomainError(self.describe_infeasible(a)) from None

    def keys(self):
        return [action_key(a) for a in self.actions]

    def describe_infeasible(self, a) -> str:
        try:
            a = tuple(a)
        except TypeError:
            return f"joint action {a!r} is not a sequence"
        if len(a) != self.k:
            return f"joint action {a!r} has {len(a)} components, expected {self.k}"
        if self.action_sets is not None:
            bad = [f"agent {i} action {x!r}" for i, (x, s) in enumerate(zip(a, self.action_sets)) if x not in s]
            if bad:
                return f"joint action {a!r} has components outside the action sets: " + ", ".join(bad)
        return f"joint action {a!r} is not in the feasible set"


def check_components(a, action_sets):
    bad = [f"agent {i} action {x!r}" for i, (x, s) in enumerate(zip(a, action_sets)) if x not in s]
    if bad:
        raise DomainError(f"joint action {a!r} has components outside the action sets: " + ", ".join(bad))
