"""Relational model: values with labeled nulls, schemas, tuples, and tgd mappings.

Everything here is an immutable value type. Mutation of actual database
state happens only through write sets applied by the engine; these types
are safe to share across threads.
"""
from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Union


class EngineError(Exception):
    """Base error for the update exchange engine."""


class SchemaError(EngineError):
    pass


class ContractError(EngineError):
    """A caller violated an operation's contract."""


# ---------------------------------------------------------------------------
# Values


@dataclass(frozen=True, slots=True)
class Constant:
    text: str

    def __repr__(self) -> str:
        return f"Constant({self.text!r})"


@dataclass(frozen=True, slots=True)
class LabeledNull:
    """A variable standing for an unknown value, with global identity.

    Ids come from a single monotonically increasing counter and are never
    reused once a null has been eliminated by unification or replacement,
    so replacing a null is globally consistent across all relations.
    """

    id: int

    def __repr__(self) -> str:
        return f"Null({self.id})"


Value = Union[Constant, LabeledNull]


def is_null(v: Value) -> bool:
    return isinstance(v, LabeledNull)


class NullFactory:
    """Global allocator for labeled-null ids. Thread safe, never reuses ids."""

    def __init__(self, start: int = 1):
        self._next = start
        self._lock = threading.Lock()

    def fresh(self) -> LabeledNull:
        with self._lock:
            n = LabeledNull(self._next)
            self._next += 1
            return n

    def reserve_above(self, used_id: int) -> None:
        """Bump the counter past an id observed in loaded data."""
        with self._lock:
            if used_id >= self._next:
                self._next = used_id + 1

    @property
    def next_id(self) -> int:
        return self._next


# ---------------------------------------------------------------------------
# Schema and tuples


@dataclass(frozen=True, slots=True)
class RelationSchema:
    name: str
    attributes: tuple[str, ...]

    def __post_init__(self):
        if not self.name:
            raise SchemaError("relation name must be nonempty")
        if len(self.attributes) == 0:
            raise SchemaError(f"relation {self.name} must have positive arity")

    @property
    def arity(self) -> int:
        return len(self.attributes)


class Schema:
    """A set of relations with unique names. Attribute names are display
    only; all matching is positional."""

    def __init__(self, relations: Iterable[RelationSchema] = ()):
        self.relations: dict[str, RelationSchema] = {}
        for r in relations:
            self.add(r)

    def add(self, rel: RelationSchema) -> None:
        if rel.name in self.relations:
            raise SchemaError(f"duplicate relation name {rel.name!r}")
        self.relations[rel.name] = rel

    def arity(self, relation: str) -> int:
        try:
            return self.relations[relation].arity
        except KeyError:
            raise SchemaError(f"unknown relation {relation!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.relations

    def names(self) -> list[str]:
        return list(self.relations)


@dataclass(frozen=True, slots=True)
class TupleData:
    relation: str
    values: tuple[Value, ...]

    def nulls(self) -> set[LabeledNull]:
        return {v for v in self.values if isinstance(v, LabeledNull)}

    def substitute(self, bindings: dict[LabeledNull, Value]) -> TupleData:
        if not bindings:
            return self
        return TupleData(
            self.relation,
            tuple(bindings.get(v, v) if isinstance(v, LabeledNull) else v for v in self.values),
        )

    def __repr__(self) -> str:
        vals = ", ".join(
            v.text if isinstance(v, Constant) else f"?{v.id}" for v in self.values
        )
        return f"{self.relation}({vals})"


def check_arity(schema: Schema, t: TupleData) -> None:
    if len(t.values) != schema.arity(t.relation):
        raise SchemaError(
            f"tuple {t!r} has {len(t.values)} values; relation "
            f"{t.relation} has arity {schema.arity(t.relation)}"
        )


# ---------------------------------------------------------------------------
# Mapping constraints (tgds)


@dataclass(frozen=True, slots=True)
class Var:
    name: str

    def __repr__(self) -> str:
        return f"?{self.name}"


Term = Union[Var, Constant]


@dataclass(frozen=True, slots=True)
class Atom:
    relation: str
    terms: tuple[Term, ...]

    def variables(self) -> set[str]:
        return {t.name for t in self.terms if isinstance(t, Var)}

    def __repr__(self) -> str:
        parts = ", ".join(t.name if isinstance(t, Var) else t.text for t in self.terms)
        return f"{self.relation}({parts})"


@dataclass(frozen=True)
class Tgd:
    """A mapping between conjunctions of atoms: whenever the lhs holds, some
    instantiation of the rhs must hold too.

    Variable classes are derived from the atoms: frontier variables occur on
    both sides, lhs-only variables occur only on the left, and existential
    variables only on the right.
    """

    id: str
    lhs: tuple[Atom, ...]
    rhs: tuple[Atom, ...]
    frontier_vars: frozenset[str] = field(init=False)
    lhs_only_vars: frozenset[str] = field(init=False)
    exist_vars: frozenset[str] = field(init=False)

    def __post_init__(self):
        if not self.lhs or not self.rhs:
            raise SchemaError(f"tgd {self.id}: lhs and rhs must be nonempty")
        lhs_vars = set().union(*(a.variables() for a in self.lhs))
        rhs_vars = set().union(*(a.variables() for a in self.rhs))
        object.__setattr__(self, "frontier_vars", frozenset(lhs_vars & rhs_vars))
        object.__setattr__(self, "lhs_only_vars", frozenset(lhs_vars - rhs_vars))
        object.__setattr__(self, "exist_vars", frozenset(rhs_vars - lhs_vars))

    def validate(self, schema: Schema) -> None:
        for atom in itertools.chain(self.lhs, self.rhs):
            if atom.relation not in schema:
                raise SchemaError(f"tgd {self.id}: unknown relation {atom.relation!r}")
            if len(atom.terms) != schema.arity(atom.relation):
                raise SchemaError(
                    f"tgd {self.id}: atom {atom!r} does not match arity "
                    f"{schema.arity(atom.relation)}"
                )

    def lhs_relations(self) -> set[str]:
        return {a.relation for a in self.lhs}

    def rhs_relations(self) -> set[str]:
        return {a.relation for a in self.rhs}

    def relations(self) -> set[str]:
        return self.lhs_relations() | self.rhs_relations()

    def __repr__(self) -> str:
        left = " & ".join(repr(a) for a in self.lhs)
        right = " & ".join(repr(a) for a in self.rhs)
        return f"[{self.id}] {left} -> {right}"


class ViolationKind(Enum):
    LHS = "lhs"
    RHS = "rhs"


@dataclass
class Violation:
    """An assignment to a tgd's frontier variables whose lhs is matched but
    whose rhs is not, together with the witnessing lhs matches.

    witnesses holds one tuple-id vector per full lhs match (positions follow
    the lhs atom order); repairing the violation must account for all of them.
    """

    tgd_id: str
    assignment: dict[str, Value]
    witnesses: list[tuple[int, ...]]
    kind: ViolationKind

    def key(self) -> tuple:
        return (self.tgd_id, tuple(sorted(self.assignment.items(), key=lambda kv: kv[0])))

    def witness_ids(self) -> set[int]:
        out: set[int] = set()
        for w in self.witnesses:
            out.update(w)
        return out


# ---------------------------------------------------------------------------
# Specificity


def specificity_mapping(t: TupleData, t_prime: TupleData) -> Optional[dict[Value, Value]]:
    """Materialize the value mapping showing t is more specific than t_prime.

    Returns the single-valued mapping sending each of t_prime's entries to
    t's entry in the same position, or None when no such mapping exists
    (it must be a function and the identity on constants).
    """
    if t.relation != t_prime.relation or len(t.values) != len(t_prime.values):
        raise SchemaError(
            f"specificity comparison requires same relation and arity: {t!r} vs {t_prime!r}"
        )
    mapping: dict[Value, Value] = {}
    for mine, theirs in zip(t.values, t_prime.values):
        if isinstance(theirs, Constant):
            if theirs != mine:
                return None
            continue
        bound = mapping.get(theirs)
        if bound is None:
            mapping[theirs] = mine
        elif bound != mine:
            return None
    return mapping


def more_specific_than(t: TupleData, t_prime: TupleData) -> bool:
    """True when every unknown in t_prime can be filled in to obtain t."""
    return specificity_mapping(t, t_prime) is not None


def strictly_more_specific(t: TupleData, t_prime: TupleData) -> bool:
    """More specific, excluding tuples identical up to a bijective renaming
    of labeled nulls. Strictness is what makes a generated tuple ambiguous:
    a merely isomorphic counterpart carries no extra information."""
    return more_specific_than(t, t_prime) and not more_specific_than(t_prime, t)


# ---------------------------------------------------------------------------
# Canonical forms modulo null renaming


def canonical_values(values: Iterable[Value], renaming: dict[int, int]) -> tuple:
    """Encode values with nulls renumbered by first occurrence (shared
    renaming dict lets callers canonicalize several tuples consistently)."""
    out = []
    for v in values:
        if isinstance(v, LabeledNull):
            if v.id not in renaming:
                renaming[v.id] = len(renaming)
            out.append(("n", renaming[v.id]))
        else:
            out.append(("c", v.text))
    return tuple(out)


def canonical_tuple(t: TupleData, renaming: Optional[dict[int, int]] = None) -> tuple:
    if renaming is None:
        renaming = {}
    return (t.relation, canonical_values(t.values, renaming))


def canonical_tuple_set(tuples: Iterable[TupleData]) -> tuple:
    """Order-insensitive canonical form for a set of tuples sharing nulls.

    Tuples are first sorted by a renaming-free shape key, then nulls are
    numbered in one pass over the sorted sequence. Isomorphic sets with
    the same shape multiset map to the same form.
    """
    def shape(t: TupleData) -> tuple:
        # positions of equal nulls within the tuple, constants verbatim
        seen: dict[int, int] = {}
        parts = []
        for v in t.values:
            if isinstance(v, LabeledNull):
                if v.id not in seen:
                    seen[v.id] = len(seen)
                parts.append(("n", seen[v.id]))
            else:
                parts.append(("c", v.text))
        return (t.relation, tuple(parts))

    ordered = sorted(tuples, key=shape)
    renaming: dict[int, int] = {}
    return tuple(canonical_tuple(t, renaming) for t in ordered)
