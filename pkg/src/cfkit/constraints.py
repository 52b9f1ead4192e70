"""Feasibility constraints: representation, checking, repair, and user updates.

A constraint set maps feature indices to at most one constraint each.
Everything here is a pure function over immutable values; sessions keep old
sets in their history, so updates always build a new set.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .data import FeatureSchema, Instance

INCREASE = "increase"
DECREASE = "decrease"

ADD = "add"
DELETE = "delete"
MODIFY = "modify"


class ConstraintError(ValueError):
    pass


class ConstraintUpdateError(ConstraintError):
    """An update batch that violates the update invariants or schema type rules."""


@dataclass(frozen=True)
class Immutable:
    pass


@dataclass(frozen=True)
class Range:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not (self.lo <= self.hi):
            raise ConstraintError(f"range bounds out of order: [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class Direction:
    sense: str

    def __post_init__(self) -> None:
        if self.sense not in (INCREASE, DECREASE):
            raise ConstraintError(f"unknown direction sense {self.sense!r}")


Constraint = Immutable | Range | Direction


class ConstraintSet(Mapping[int, Constraint]):
    """Immutable feature-index -> Constraint mapping."""

    def __init__(self, entries: Mapping[int, Constraint] | None = None):
        self._entries: dict[int, Constraint] = dict(entries or {})
        for i, c in self._entries.items():
            if not isinstance(i, int) or i < 0:
                raise ConstraintError(f"bad feature index {i!r}")
            if not isinstance(c, (Immutable, Range, Direction)):
                raise ConstraintError(f"not a constraint: {c!r}")

    @classmethod
    def empty(cls) -> "ConstraintSet":
        return cls()

    def __getitem__(self, i: int) -> Constraint:
        return self._entries[i]

    def __iter__(self) -> Iterator[int]:
        return iter(sorted(self._entries))

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, ConstraintSet) and self._entries == other._entries

    def __repr__(self) -> str:
        inner = ", ".join(f"{i}: {c}" for i, c in sorted(self._entries.items()))
        return f"ConstraintSet({{{inner}}})"


def validate_constraint_set(C: ConstraintSet, schema: FeatureSchema) -> None:
    """Check schema type rules: indices exist, Range/Direction only on numerics."""
    for i, c in C.items():
        if i >= schema.d:
            raise ConstraintError(f"constraint on nonexistent feature index {i}")
        spec = schema.feature(i)
        if isinstance(c, (Range, Direction)) and not spec.is_numeric:
            kind = type(c).__name__
            raise ConstraintError(f"{kind} constraint on categorical feature {spec.name!r}")


def is_feasible(x: Instance, cand: Instance, C: ConstraintSet) -> bool:
    """True iff cand satisfies every constraint in C relative to x."""
    xv, cv = x.values, cand.values
    for i, c in C.items():
        if i >= len(cv):
            raise ConstraintError(f"constraint on nonexistent feature index {i}")
        if isinstance(c, Immutable):
            if cv[i] != xv[i]:
                return False
        elif isinstance(c, Range):
            if not (c.lo <= cv[i] <= c.hi):
                return False
        else:
            if c.sense == INCREASE:
                if cv[i] < xv[i]:
                    return False
            elif cv[i] > xv[i]:
                return False
    return True


def repair(x: Instance, cand: Instance, C: ConstraintSet) -> Instance:
    """Project cand onto the feasible region, touching only violated features.

    Immutable and Direction violations snap back to x_i; Range violations
    clamp to the nearest bound. Idempotent and total.
    """
    cv = np.array(cand.values)
    xv = x.values
    for i, c in C.items():
        if i >= len(cv):
            raise ConstraintError(f"constraint on nonexistent feature index {i}")
        if isinstance(c, Immutable):
            if cv[i] != xv[i]:
                cv[i] = xv[i]
        elif isinstance(c, Range):
            if cv[i] < c.lo:
                cv[i] = c.lo
            elif cv[i] > c.hi:
                cv[i] = c.hi
        else:
            if c.sense == INCREASE:
                if cv[i] < xv[i]:
                    cv[i] = xv[i]
            elif cv[i] > xv[i]:
                cv[i] = xv[i]
    return Instance(cv)


@dataclass(frozen=True)
class ConstraintUpdate:
    action: str
    feature: int
    constraint: Constraint | None = None

    def __post_init__(self) -> None:
        if self.action not in (ADD, DELETE, MODIFY):
            raise ConstraintUpdateError(f"unknown update action {self.action!r}")
        if self.action == DELETE:
            if self.constraint is not None:
                raise ConstraintUpdateError("delete update must not carry a constraint")
        elif self.constraint is None:
            raise ConstraintUpdateError(f"{self.action} update needs a constraint")


def apply_update(C: ConstraintSet, u: ConstraintUpdate, schema: FeatureSchema) -> ConstraintSet:
    """Return a new set with the update applied; the input set is never modified."""
    if u.feature >= schema.d or u.feature < 0:
        raise ConstraintUpdateError(f"update targets nonexistent feature index {u.feature}")
    name = schema.feature(u.feature).name
    entries = dict(C)
    if u.action == ADD:
        if u.feature in entries:
            raise ConstraintUpdateError(f"feature {name!r} is already constrained; use modify")
        entries[u.feature] = u.constraint
    elif u.action == DELETE:
        if u.feature not in entries:
            raise ConstraintUpdateError(f"cannot delete: feature {name!r} has no constraint")
        del entries[u.feature]
    else:
        if u.feature not in entries:
            raise ConstraintUpdateError(f"cannot modify: feature {name!r} has no constraint")
        entries[u.feature] = u.constraint
    out = ConstraintSet(entries)
    try:
        validate_constraint_set(out, schema)
    except ConstraintError as exc:
        raise ConstraintUpdateError(str(exc)) from None
    return out


def apply_updates(C: ConstraintSet, updates, schema: FeatureSchema) -> ConstraintSet:
    """Apply a batch atomically: either all succeed or the original set stands."""
    out = C
    for u in updates:
        out = apply_update(out, u, schema)
    return out


# -- JSON wire encoding -------------------------------------------------------
#
# Constraint entry: {"feature": <name>, "type": "immutable"}
#                   {"feature": <name>, "type": "range", "lo": 4, "hi": 20}
#                   {"feature": <name>, "type": "direction", "sense": "increase"}
# Update entry:     {"action": "add"|"delete"|"modify", "feature": <name>,
#                    "constraint": {"type": ..., ...}}   (absent for delete)

def constraint_to_wire(c: Constraint) -> dict:
    if isinstance(c, Immutable):
        return {"type": "immutable"}
    if isinstance(c, Range):
        return {"type": "range", "lo": c.lo, "hi": c.hi}
    return {"type": "direction", "sense": c.sense}


def constraint_from_wire(obj: dict) -> Constraint:
    if not isinstance(obj, dict) or "type" not in obj:
        raise ConstraintUpdateError(f"constraint object must carry a type: {obj!r}")
    kind = obj["type"]
    try:
        if kind == "immutable":
            return Immutable()
        if kind == "range":
            return Range(float(obj["lo"]), float(obj["hi"]))
        if kind == "direction":
            return Direction(str(obj["sense"]))
    except KeyError as exc:
        raise ConstraintUpdateError(f"{kind} constraint missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConstraintUpdateError(f"bad {kind} constraint: {exc}") from None
    raise ConstraintUpdateError(f"unknown constraint type {kind!r}")


def constraint_set_to_wire(C: ConstraintSet, schema: FeatureSchema) -> list[dict]:
    out = []
    for i in C:  # iteration is index-sorted
        entry = {"feature": schema.feature(i).name}
        entry.update(constraint_to_wire(C[i]))
        out.append(entry)
    return out


def update_from_wire(obj: dict, schema: FeatureSchema) -> ConstraintUpdate:
    if not isinstance(obj, dict) or "action" not in obj or "feature" not in obj:
        raise ConstraintUpdateError(f"update object needs action and feature: {obj!r}")
    try:
        idx = schema.feature_index(str(obj["feature"]))
    except Exception:
        raise ConstraintUpdateError(f"update targets unknown feature {obj['feature']!r}") from None
    action = obj["action"]
    constraint = None
    if action in (ADD, MODIFY):
        if "constraint" not in obj:
            raise ConstraintUpdateError(f"{action} update needs a constraint object")
        constraint = constraint_from_wire(obj["constraint"])
    return ConstraintUpdate(action, idx, constraint)


def update_to_wire(u: ConstraintUpdate, schema: FeatureSchema) -> dict:
    out: dict = {"action": u.action, "feature": schema.feature(u.feature).name}
    if u.constraint is not None:
        out["constraint"] = constraint_to_wire(u.constraint)
    return out
