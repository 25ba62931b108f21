"""Replay tooling: serial re-execution of a logged run and the final-state
comparison behind the serializability verdict.

The verdict replays every terminated update in priority order on the
initial snapshot, reusing the run's recorded frontier decisions, and then
compares the resulting database with the concurrent run's final database
up to a bijective renaming of labeled nulls (fresh-null counters are not
expected to agree across interleavings). A replay that reaches a frontier
request with no recorded decision yields the explicit verdict
"incomparable" rather than a guess.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Optional

from .chase import (
    ChaseEngine,
    DeleteSubset,
    EngineError,
    Expand,
    FrontierRequest,
    Origin,
    Unify,
    UpdateRecord,
    null_context,
    run_single_update,
)
from .model import LabeledNull, NullFactory, TupleData, canonical_tuple
from .mvcc import VersionStore
from .schedlog import ScheduleLog, canon_json, rebuild_store_from_log


class MissingDecision(EngineError):
    pass


class DecisionLog:
    """Recorded frontier decisions, consumable in order per (update, key)."""

    def __init__(self, log: ScheduleLog):
        self._store: dict[tuple[int, str], list[dict]] = {}
        for rec in log.by_kind("decision"):
            key = (rec["number"], rec["key"])
            self._store.setdefault(key, []).append(json.loads(rec["payload"]))

    def peek(self, number: int, key_json: str) -> Optional[dict]:
        queue = self._store.get((number, key_json))
        return queue[0] if queue else None

    def pop(self, number: int, key_json: str) -> Optional[dict]:
        queue = self._store.get((number, key_json))
        if not queue:
            return None
        return queue.pop(0)


def _match_member(req: FrontierRequest, payload: dict) -> Optional[tuple]:
    ordinal = payload.get("ordinal")
    want = canon_json(payload["member"])
    by_canonical = None
    for member, candidates in req.members:
        if ordinal is not None and member.ordinal == ordinal:
            return member, candidates
        if by_canonical is None and canon_json(canonical_tuple(member.tuple)) == want:
            by_canonical = (member, candidates)
    return by_canonical


def _translate(req: FrontierRequest, payload: dict, view):
    op = payload["op"]
    if op == "expand":
        found = _match_member(req, payload)
        if found is None:
            return None
        return Expand(found[0].ft_id)
    if op == "unify":
        found = _match_member(req, payload)
        if found is None:
            return None
        member, candidates = found
        want = canon_json(payload["target"])
        want_ctx = canon_json(payload.get("target_ctx"))
        by_payload = None
        for tid, p in candidates:
            if canon_json(canonical_tuple(p)) != want:
                continue
            if by_payload is None:
                by_payload = tid
            if canon_json(null_context(view, p)) == want_ctx:
                return Unify(member.ft_id, tid)
        # no candidate matches the recorded null context; symmetric twins
        # tie on the payload form, so fall back to the first of those
        if by_payload is not None:
            return Unify(member.ft_id, by_payload)
        return None
    if op == "delete_subset":
        available: dict[str, list[tuple[str, int]]] = {}
        for tid, p in req.candidates:
            available.setdefault(canon_json(canonical_tuple(p)), []).append(
                (canon_json(null_context(view, p)), tid)
            )
        picked = []
        for entry in payload["chosen"]:
            want, want_ctx = canon_json(entry[0]), canon_json(entry[1])
            pool = available.get(want)
            if not pool:
                return None
            hit = next((i for i, (ctx, _tid) in enumerate(pool) if ctx == want_ctx), 0)
            picked.append(pool.pop(hit)[1])
        return DeleteSubset(req.request_id, frozenset(picked))
    return None


def replay_decider(engine: ChaseEngine, decisions: DecisionLog, number: int):
    def decide(u: UpdateRecord):
        tried = []
        view = engine.store.view(number)
        for req in sorted(u.live_requests(), key=lambda r: r.request_id):
            key = canon_json(engine.request_replay_key(u, req))
            payload = decisions.peek(number, key)
            if payload is None:
                tried.append(key)
                continue
            op = _translate(req, payload, view)
            if op is None:
                raise MissingDecision(
                    f"update {number}: recorded decision does not fit the live request"
                )
            decisions.pop(number, key)
            return op
        raise MissingDecision(
            f"update {number}: no recorded decision for pending requests {tried}"
        )

    return decide


def _resolve_origin(origin: Origin, store: VersionStore, number: int) -> Origin:
    """Remap a delete origin onto the replay store when tuple ids drifted."""
    if origin.kind != "delete" or origin.tuple is None:
        return origin
    view = store.view(number)
    if view.get(origin.tuple_id) == origin.tuple:
        return origin
    for tid, payload in view.scan(origin.tuple.relation):
        if payload == origin.tuple:
            return replace(origin, tuple_id=tid)
    return origin  # target gone: the delete degenerates to a recorded no-op


@dataclass
class ReplayOutcome:
    store: VersionStore
    status: str  # "ok" | "incomparable" | "budget"
    detail: str = ""


def serial_reexecution(log: ScheduleLog, max_steps: int = 100_000) -> ReplayOutcome:
    """Execute each terminated update to completion, one after another in
    priority order, against the log's initial snapshot."""
    schema, tgds = log.context()
    store = log.initial_store()
    nulls = NullFactory(start=log.header()["null_counter"])
    engine = ChaseEngine(schema, tgds, store, nulls)
    decisions = DecisionLog(log)
    origins = log.origins()
    for n in log.terminated_numbers():
        origin = _resolve_origin(origins[n], store, n)
        u = engine.begin_update(origin, n, validate=False)
        try:
            run_single_update(
                engine, u, decide=replay_decider(engine, decisions, n), max_steps=max_steps
            )
        except MissingDecision as e:
            return ReplayOutcome(store, "incomparable", str(e))
        except EngineError as e:
            return ReplayOutcome(store, "budget", str(e))
    return ReplayOutcome(store, "ok")


# ---------------------------------------------------------------------------
# Database equality up to null renaming


def _shape(t: TupleData) -> tuple:
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


def databases_equal_up_to_renaming(
    tuples_a: list[TupleData], tuples_b: list[TupleData]
) -> bool:
    """Is there a bijection over labeled nulls mapping one live tuple set
    onto the other? Ground tuples must match exactly; tuples with nulls are
    matched by backtracking under a single global bijection."""
    set_a = {(t.relation, t.values): t for t in tuples_a}
    set_b = {(t.relation, t.values): t for t in tuples_b}
    ground_a = {k for k, t in set_a.items() if not t.nulls()}
    ground_b = {k for k, t in set_b.items() if not t.nulls()}
    if ground_a != ground_b:
        return False
    open_a = sorted((set_a[k] for k in set_a.keys() - ground_a), key=_shape)
    open_b = [set_b[k] for k in set_b.keys() - ground_b]
    if len(open_a) != len(open_b):
        return False
    by_shape: dict[tuple, list[TupleData]] = {}
    for t in open_b:
        by_shape.setdefault(_shape(t), []).append(t)
    if sorted(map(_shape, open_a)) != sorted(by_shape_keys_expanded(by_shape)):
        return False

    fwd: dict[int, int] = {}
    rev: dict[int, int] = {}
    used: set[int] = set()

    def consistent(ta: TupleData, tb: TupleData) -> Optional[list[tuple[int, int]]]:
        added = []
        for va, vb in zip(ta.values, tb.values):
            a_null = isinstance(va, LabeledNull)
            b_null = isinstance(vb, LabeledNull)
            if a_null != b_null:
                for x, y in added:
                    del fwd[x]
                    del rev[y]
                return None
            if not a_null:
                if va != vb:
                    for x, y in added:
                        del fwd[x]
                        del rev[y]
                    return None
                continue
            fa = fwd.get(va.id)
            rb = rev.get(vb.id)
            if fa is None and rb is None:
                fwd[va.id] = vb.id
                rev[vb.id] = va.id
                added.append((va.id, vb.id))
            elif fa != vb.id or rb != va.id:
                for x, y in added:
                    del fwd[x]
                    del rev[y]
                return None
        return added

    def backtrack(i: int) -> bool:
        if i == len(open_a):
            return True
        ta = open_a[i]
        for tb in by_shape.get(_shape(ta), ()):
            if id(tb) in used:
                continue
            added = consistent(ta, tb)
            if added is None:
                continue
            used.add(id(tb))
            if backtrack(i + 1):
                return True
            used.discard(id(tb))
            for x, y in added:
                del fwd[x]
                del rev[y]
        return False

    return backtrack(0)


def by_shape_keys_expanded(by_shape: dict) -> list:
    out = []
    for shape, items in by_shape.items():
        out.extend([shape] * len(items))
    return out


# ---------------------------------------------------------------------------
# The serializability verdict


@dataclass
class Verdict:
    serializable: Optional[bool]  # None when incomparable
    status: str  # "ok" | "incomparable" | "budget"
    detail: str = ""

    def __bool__(self) -> bool:
        return bool(self.serializable)


def final_live_payloads(store: VersionStore) -> list[TupleData]:
    return [p for _tid, p in store.live_tuples()]


def check_final_state_serializable(
    log: ScheduleLog, actual_store: Optional[VersionStore] = None
) -> Verdict:
    """Does executing the log's terminated updates serially, reusing the
    recorded frontier decisions, reach the same final database as the
    concurrent run did (up to null renaming)?"""
    if actual_store is None:
        actual_store = rebuild_store_from_log(log)
    outcome = serial_reexecution(log)
    if outcome.status != "ok":
        return Verdict(None, outcome.status, outcome.detail)
    same = databases_equal_up_to_renaming(
        final_live_payloads(actual_store), final_live_payloads(outcome.store)
    )
    if same:
        return Verdict(True, "ok")
    return Verdict(False, "ok", "final states differ between concurrent and serial execution")
