"""Multiversion tuple store with priority-number visibility.

Each tuple id carries a chain of versions with strictly increasing version
numbers. The version visible to update j is the one with the largest
version number among those created by updates numbered at most j; a
visible deleted version hides the tuple. Versions created by an aborted
update are physically removed, re-exposing whatever they shadowed.

An append-only history of every applied write is kept alongside the live
chains so that replay tooling and test oracles can reconstruct any past
view, including views that counterfactually exclude some update.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Iterable, Optional

from .model import Schema, TupleData, check_arity
from .writes import AppliedWrite, Delete, Insert, Modify, Write, WriteSet


@dataclass(frozen=True, slots=True)
class VersionedTuple:
    tuple_id: int
    version: int
    updater: int
    payload: TupleData
    live: bool
    lsn: int


class VersionStore:
    """Single-writer version store; snapshots are cheap and read-only."""

    def __init__(self, schema: Schema):
        self.schema = schema
        self._chains: dict[int, list[VersionedTuple]] = {}
        self._relation_ids: dict[str, set[int]] = {}
        self._next_tuple_id = 1
        self._next_lsn = 1
        self.history: list[AppliedWrite] = []
        self._lock = threading.RLock()

    # -- write side (called only from the scheduler) --

    def _new_tuple_id(self) -> int:
        tid = self._next_tuple_id
        self._next_tuple_id += 1
        return tid

    def _new_lsn(self) -> int:
        lsn = self._next_lsn
        self._next_lsn += 1
        return lsn

    def _append_version(self, tid: int, updater: int, payload: TupleData, live: bool, lsn: int):
        chain = self._chains.setdefault(tid, [])
        version = chain[-1].version + 1 if chain else 1
        chain.append(VersionedTuple(tid, version, updater, payload, live, lsn))
        self._relation_ids.setdefault(payload.relation, set()).add(tid)

    def apply(self, updater: int, ws: WriteSet) -> list[AppliedWrite]:
        """Apply a write set on behalf of one update, returning the applied
        writes (including recorded no-ops)."""
        with self._lock:
            out: list[AppliedWrite] = []
            view = self.view(updater)
            for w in ws:
                out.append(self._apply_one(updater, w, view))
            return out

    def _apply_one(self, updater: int, w: Write, view: "StoreView") -> AppliedWrite:
        if isinstance(w, Insert):
            check_arity(self.schema, w.tuple)
            # set semantics: re-inserting a payload live in the writer's view is a no-op
            for tid, payload in view.scan(w.tuple.relation):
                if payload == w.tuple:
                    rec = AppliedWrite(
                        "insert", tid, w.tuple.relation, None, w.tuple,
                        updater, self._new_lsn(), applied=False,
                    )
                    self.history.append(rec)
                    return rec
            tid = self._new_tuple_id()
            lsn = self._new_lsn()
            self._append_version(tid, updater, w.tuple, True, lsn)
            view.invalidate(w.tuple.relation)
            rec = AppliedWrite("insert", tid, w.tuple.relation, None, w.tuple, updater, lsn)
            self.history.append(rec)
            return rec
        if isinstance(w, Delete):
            old = view.get(w.tuple_id)
            if old is None:
                # already dead or invisible: recorded no-op
                rel = self._chains[w.tuple_id][-1].payload.relation if w.tuple_id in self._chains else "?"
                rec = AppliedWrite(
                    "delete", w.tuple_id, rel, None, None,
                    updater, self._new_lsn(), applied=False,
                )
                self.history.append(rec)
                return rec
            lsn = self._new_lsn()
            self._append_version(w.tuple_id, updater, old, False, lsn)
            view.invalidate(old.relation)
            rec = AppliedWrite("delete", w.tuple_id, old.relation, old, None, updater, lsn)
            self.history.append(rec)
            return rec
        if isinstance(w, Modify):
            old = view.get(w.tuple_id)
            if old is None or old == w.new_tuple:
                rel = w.new_tuple.relation
                rec = AppliedWrite(
                    "modify", w.tuple_id, rel, old, w.new_tuple,
                    updater, self._new_lsn(), applied=False,
                )
                self.history.append(rec)
                return rec
            check_arity(self.schema, w.new_tuple)
            lsn = self._new_lsn()
            self._append_version(w.tuple_id, updater, w.new_tuple, True, lsn)
            view.invalidate(old.relation)
            view.invalidate(w.new_tuple.relation)
            rec = AppliedWrite("modify", w.tuple_id, old.relation, old, w.new_tuple, updater, lsn)
            self.history.append(rec)
            return rec
        raise TypeError(f"unknown write {w!r}")

    def remove_versions_of(self, updater: int) -> int:
        """Physically drop every version created by updater (abort path)."""
        with self._lock:
            removed = 0
            for tid in list(self._chains):
                chain = self._chains[tid]
                kept = [v for v in chain if v.updater != updater]
                removed += len(chain) - len(kept)
                if kept:
                    self._chains[tid] = kept
                else:
                    del self._chains[tid]
            return removed

    # -- read side --

    def view(
        self,
        number: int,
        exclude: frozenset[int] = frozenset(),
        max_lsn: Optional[int] = None,
        self_cap: Optional[tuple[int, int]] = None,
    ) -> "StoreView":
        return StoreView(self, number, exclude, max_lsn, self_cap)

    def visible_version(
        self,
        tuple_id: int,
        number: int,
        exclude: frozenset[int] = frozenset(),
        max_lsn: Optional[int] = None,
        self_cap: Optional[tuple[int, int]] = None,
    ) -> Optional[VersionedTuple]:
        """self_cap=(updater, lsn) hides that updater's versions newer than
        lsn; conflict checks use it to look at a reader's view as of one of
        its own reads, without the reader's later writes."""
        chain = self._chains.get(tuple_id)
        if not chain:
            return None
        best: Optional[VersionedTuple] = None
        for v in chain:
            if v.updater > number or v.updater in exclude:
                continue
            if max_lsn is not None and v.lsn > max_lsn:
                continue
            if self_cap is not None and v.updater == self_cap[0] and v.lsn > self_cap[1]:
                continue
            if best is None or v.version > best.version:
                best = v
        return best

    def tuple_ids(self, relation: str) -> Iterable[int]:
        return self._relation_ids.get(relation, ())

    def relations(self) -> list[str]:
        return sorted(self.schema.names())

    @property
    def lsn(self) -> int:
        return self._next_lsn - 1

    def lock(self) -> threading.RLock:
        return self._lock

    # -- snapshots and comparison --

    def dump_chains(self) -> dict[int, list[tuple]]:
        """Canonical content dump: per tuple id, the ordered version chain as
        (updater, relation, values, live). Version numbers and lsns are
        bookkeeping and excluded, so a store rebuilt by replaying the same
        writes compares equal."""
        with self._lock:
            out: dict[int, list[tuple]] = {}
            for tid in sorted(self._chains):
                out[tid] = [
                    (
                        v.updater,
                        v.payload.relation,
                        tuple(v.payload.values),
                        v.live,
                    )
                    for v in self._chains[tid]
                ]
            return out

    def live_tuples(self, number: Optional[int] = None) -> list[tuple[int, TupleData]]:
        """Live tuples visible to the given priority (default: everything)."""
        n = number if number is not None else self._next_tuple_id + 10**9
        view = self.view(n)
        out = []
        for rel in self.relations():
            out.extend(view.scan(rel))
        return out


def rebuild_from_history(
    schema: Schema, history: Iterable[AppliedWrite], exclude: frozenset[int] | set[int] = frozenset()
) -> VersionStore:
    """Reconstruct a store by replaying applied writes verbatim, skipping
    excluded updaters. Only valid for stores whose whole content arrived
    through apply(), i.e. whose history is complete."""
    st = VersionStore(schema)
    max_tid = 0
    max_lsn = 0
    for w in history:
        max_tid = max(max_tid, w.tuple_id if isinstance(w.tuple_id, int) else 0)
        max_lsn = max(max_lsn, w.lsn)
        if not w.applied or w.updater in exclude:
            continue
        if w.kind == "insert":
            st._append_version(w.tuple_id, w.updater, w.new_tuple, True, w.lsn)
        elif w.kind == "delete":
            st._append_version(w.tuple_id, w.updater, w.old_tuple, False, w.lsn)
        else:
            st._append_version(w.tuple_id, w.updater, w.new_tuple, True, w.lsn)
    st._next_tuple_id = max_tid + 1
    st._next_lsn = max_lsn + 1
    return st


class StoreView:
    """Snapshot of the store for one viewer priority.

    Relation scans are cached; the scheduler invalidates affected relations
    as it applies writes so a view stays usable across one step's writes.
    """

    def __init__(
        self,
        store: VersionStore,
        number: int,
        exclude: frozenset[int] = frozenset(),
        max_lsn: Optional[int] = None,
        self_cap: Optional[tuple[int, int]] = None,
    ):
        self.store = store
        self.number = number
        self.exclude = exclude
        self.max_lsn = max_lsn
        self.self_cap = self_cap
        self._cache: dict[str, list[tuple[int, TupleData]]] = {}

    def scan(self, relation: str) -> list[tuple[int, TupleData]]:
        cached = self._cache.get(relation)
        if cached is None:
            cached = []
            for tid in sorted(self.store.tuple_ids(relation)):
                v = self.store.visible_version(
                    tid, self.number, self.exclude, self.max_lsn, self.self_cap
                )
                if v is not None and v.live and v.payload.relation == relation:
                    cached.append((tid, v.payload))
            self._cache[relation] = cached
        return cached

    def get(self, tuple_id: int) -> Optional[TupleData]:
        v = self.store.visible_version(
            tuple_id, self.number, self.exclude, self.max_lsn, self.self_cap
        )
        if v is not None and v.live:
            return v.payload
        return None

    def relations(self) -> list[str]:
        return self.store.relations()

    def invalidate(self, relation: str) -> None:
        self._cache.pop(relation, None)

    def without(self, excluded_updater: int) -> "StoreView":
        return StoreView(
            self.store,
            self.number,
            self.exclude | frozenset([excluded_updater]),
            self.max_lsn,
            self.self_cap,
        )
