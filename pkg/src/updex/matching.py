"""Homomorphism matching of atom conjunctions against a database view.

Database nulls are treated as ordinary domain values: a variable binds to a
null exactly as it would to a constant, and two positions join only when
their values are equal (null ids included). This is plain naive-table
semantics and is what makes violation detection well defined on databases
containing unknowns.
"""
from __future__ import annotations

from typing import Iterable, Optional, Protocol

from .model import (
    Atom,
    Constant,
    ContractError,
    LabeledNull,
    Tgd,
    TupleData,
    Value,
    is_null,
    more_specific_than,
    strictly_more_specific,
)
from .writes import Modify, WriteSet


class DatabaseView(Protocol):
    """Read-only snapshot of live tuples."""

    def scan(self, relation: str) -> Iterable[tuple[int, TupleData]]:
        ...

    def get(self, tuple_id: int) -> Optional[TupleData]:
        ...

    def relations(self) -> Iterable[str]:
        ...


class InMemoryDatabase:
    """Minimal DatabaseView over a dict; used by tests and oracles."""

    def __init__(self, tuples: Iterable[TupleData] = ()):
        self._tuples: dict[int, TupleData] = {}
        self._next_id = 1
        for t in tuples:
            self.insert(t)

    def insert(self, t: TupleData) -> int:
        tid = self._next_id
        self._next_id += 1
        self._tuples[tid] = t
        return tid

    def delete(self, tuple_id: int) -> None:
        self._tuples.pop(tuple_id, None)

    def replace(self, tuple_id: int, t: TupleData) -> None:
        self._tuples[tuple_id] = t

    def scan(self, relation: str):
        return [(i, t) for i, t in self._tuples.items() if t.relation == relation]

    def get(self, tuple_id: int) -> Optional[TupleData]:
        return self._tuples.get(tuple_id)

    def relations(self):
        return sorted({t.relation for t in self._tuples.values()})

    def all_tuples(self) -> list[tuple[int, TupleData]]:
        return list(self._tuples.items())


Assignment = dict[str, Value]


def _match_atom(
    atom: Atom, payload: TupleData, binding: Assignment
) -> Optional[Assignment]:
    """Extend binding so atom matches payload, or None if impossible."""
    extended: Optional[Assignment] = None
    for term, value in zip(atom.terms, payload.values):
        if isinstance(term, Constant):
            if term != value:
                return None
            continue
        bound = binding.get(term.name)
        if bound is None and extended is not None:
            bound = extended.get(term.name)
        if bound is None:
            if extended is None:
                extended = {}
            extended[term.name] = value
        elif bound != value:
            return None
    if extended is None:
        return binding
    merged = dict(binding)
    merged.update(extended)
    return merged


def match_conjunction(
    view: DatabaseView,
    atoms: tuple[Atom, ...],
    binding: Optional[Assignment] = None,
    anchors: Optional[dict[int, tuple[int, TupleData]]] = None,
    limit: Optional[int] = None,
) -> list[tuple[Assignment, tuple[int, ...]]]:
    """All homomorphisms from the conjunction into the view.

    binding pre-constrains variables. anchors force atom indexes to match
    specific (tuple_id, payload) pairs, which need not be live in the view;
    this is how queries are pinned to just-written tuples. limit stops the
    search after that many results (existence checks pass limit=1).
    """
    results: list[tuple[Assignment, tuple[int, ...]]] = []
    base = dict(binding) if binding else {}

    def recurse(i: int, bound: Assignment, ids: tuple[int, ...]) -> bool:
        if i == len(atoms):
            results.append((bound, ids))
            return limit is not None and len(results) >= limit
        atom = atoms[i]
        if anchors is not None and i in anchors:
            candidates: Iterable[tuple[int, TupleData]] = [anchors[i]]
        else:
            candidates = view.scan(atom.relation)
        for tid, payload in candidates:
            ext = _match_atom(atom, payload, bound)
            if ext is not None:
                if recurse(i + 1, ext, ids + (tid,)):
                    return True
        return False

    recurse(0, base, ())
    return results


def match_lhs(view: DatabaseView, tgd: Tgd) -> list[tuple[Assignment, tuple[int, ...]]]:
    """Every assignment over the lhs variables together with its witness ids."""
    return match_conjunction(view, tgd.lhs)


def rhs_satisfiable(view: DatabaseView, tgd: Tgd, assignment: Assignment) -> bool:
    """Does some instantiation of the rhs exist under the frontier bindings?"""
    binding = {v: assignment[v] for v in tgd.frontier_vars if v in assignment}
    return bool(match_conjunction(view, tgd.rhs, binding=binding))


def find_more_specific(
    view: DatabaseView, t: TupleData, strict: bool = True
) -> list[tuple[int, TupleData]]:
    """Live tuples in t's relation that are (strictly) more specific than t."""
    out = []
    for tid, payload in view.scan(t.relation):
        if strict:
            if strictly_more_specific(payload, t):
                out.append((tid, payload))
        elif more_specific_than(payload, t):
            out.append((tid, payload))
    return out


def null_occurrences(view: DatabaseView, null: LabeledNull) -> list[tuple[int, TupleData]]:
    """All live tuples containing the null, across every relation."""
    out = []
    for rel in view.relations():
        for tid, payload in view.scan(rel):
            if null in payload.values:
                out.append((tid, payload))
    return out


def normalize_bindings(pairs: Iterable[tuple[Value, Value]]) -> dict[LabeledNull, Value]:
    """Collapse value equivalences into an idempotent null substitution.

    Each pair asserts its two values denote the same thing. Classes are
    merged union-find style; the representative is the class constant when
    one exists (two distinct constants in a class is a contract violation),
    otherwise the lowest-id null. The result maps every non-representative
    null to its representative and never chains.
    """
    parent: dict[Value, Value] = {}

    def find(v: Value) -> Value:
        while parent.get(v, v) != v:
            parent[v] = parent.get(parent[v], parent[v])
            v = parent[v]
        return v

    def union(a: Value, b: Value) -> None:
        ra, rb = find(a), find(b)
        if ra == rb:
            return
        if isinstance(ra, Constant) and isinstance(rb, Constant):
            raise ContractError(f"cannot unify distinct constants {ra!r} and {rb!r}")
        # prefer a constant representative, else the lowest null id
        if isinstance(ra, Constant):
            parent[rb] = ra
        elif isinstance(rb, Constant):
            parent[ra] = rb
        elif ra.id <= rb.id:
            parent[rb] = ra
        else:
            parent[ra] = rb

    for a, b in pairs:
        union(a, b)

    out: dict[LabeledNull, Value] = {}
    for v in list(parent):
        rep = find(v)
        if isinstance(v, LabeledNull) and rep != v:
            out[v] = rep
    return out


def unification_bindings(t: TupleData, target: TupleData) -> dict[LabeledNull, Value]:
    """Null bindings unifying t with a more specific target tuple."""
    if not more_specific_than(target, t):
        raise ContractError(f"{target!r} is not more specific than {t!r}")
    pairs = []
    for mine, theirs in zip(t.values, target.values):
        if mine != theirs:
            pairs.append((mine, theirs))
    return normalize_bindings(pairs)


def apply_unifier(
    view: DatabaseView, bindings: dict[LabeledNull, Value]
) -> WriteSet:
    """Writes replacing every occurrence of each bound null, across all
    relations, so the replacement is globally consistent.

    bindings must be idempotent: no null appears on both sides. Constants
    may not be rebound.
    """
    for src, dst in bindings.items():
        if not is_null(src):
            raise ContractError(f"cannot bind constant {src!r}")
        if src == dst:
            raise ContractError(f"null {src!r} bound to itself")
    targets = {v for v in bindings.values() if isinstance(v, LabeledNull)}
    if targets & set(bindings):
        raise ContractError("bindings are not idempotent: a bound null appears in the range")

    ws = WriteSet()
    if not bindings:
        return ws
    cause = tuple(sorted(bindings.items(), key=lambda kv: kv[0].id))
    for rel in view.relations():
        for tid, payload in view.scan(rel):
            replaced = payload.substitute(bindings)
            if replaced != payload:
                ws.add(Modify(tid, replaced, cause))
    return ws
