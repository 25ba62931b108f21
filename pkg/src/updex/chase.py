"""The cooperative chase: forward and backward repair of mapping violations
as a sequence of steps, with points of ambiguity handed to a human (or
simulated) decision maker as frontier requests.

A step applies its pending writes, discovers the violations those writes
caused, and then either produces the next corrective write set (when some
queued violation can be repaired without ambiguity), blocks on frontier
requests, or finishes. Frontier operations turn a blocked update back into
a running one by supplying its next write set.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional, Protocol, Union

from .matching import (
    DatabaseView,
    _match_atom,
    apply_unifier,
    find_more_specific,
    match_conjunction,
    null_occurrences,
    unification_bindings,
)
from .model import (
    Constant,
    ContractError,
    EngineError,
    LabeledNull,
    NullFactory,
    Schema,
    Tgd,
    TupleData,
    Value,
    Var,
    Violation,
    ViolationKind,
    canonical_tuple,
    canonical_tuple_set,
    check_arity,
)
from .mvcc import VersionStore
from .queries import (
    AnchorBinding,
    NullOccurrenceQuerySpec,
    QuerySpec,
    SpecificityQuerySpec,
    ViolationQuerySpec,
    build_violation_query,
    evaluate,
)
from .writes import AppliedWrite, Delete, Insert, Modify, WriteSet


class FrontierError(EngineError):
    """A frontier operation was rejected; reason is machine readable."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}: {detail}" if detail else reason)


# ---------------------------------------------------------------------------
# User-facing origins and update lifecycle


@dataclass(frozen=True)
class Origin:
    """The initial user operation an update propagates."""

    kind: str  # "insert" | "delete" | "null_replace"
    tuple: Optional[TupleData] = None
    tuple_id: Optional[int] = None
    null: Optional[LabeledNull] = None
    replacement: Optional[Constant] = None

    @staticmethod
    def insert(t: TupleData) -> "Origin":
        return Origin(kind="insert", tuple=t)

    @staticmethod
    def delete(tuple_id: int) -> "Origin":
        return Origin(kind="delete", tuple_id=tuple_id)

    @staticmethod
    def null_replace(null: LabeledNull, replacement: Constant) -> "Origin":
        return Origin(kind="null_replace", null=null, replacement=replacement)

    @property
    def polarity(self) -> str:
        return "negative" if self.kind == "delete" else "positive"


class UpdateState(Enum):
    RUNNING = "running"
    BLOCKED = "blocked_on_frontier"
    FINISHED = "finished"  # chase complete; permanent once predecessors finish
    TERMINATED = "terminated"
    ABORTED = "aborted"
    REJECTED = "rejected"


@dataclass
class PositiveFrontierTuple:
    """A tuple generated by a mapping firing but held back because a more
    specific live tuple already exists in its relation. ordinal is the
    tuple's rhs-atom position within its firing; it identifies the member
    stably across re-executions even when sibling payloads are isomorphic."""

    ft_id: int
    ordinal: int
    tuple: TupleData
    fresh_nulls: frozenset[LabeledNull]
    tgd_id: str
    witness: tuple[TupleData, ...]
    group_id: int


@dataclass
class FrontierGroup:
    """Generated tuples from one firing; they may share fresh nulls, so
    substitutions from unifying one member apply to the rest."""

    group_id: int
    members: list[PositiveFrontierTuple]

    def substitute(self, bindings: dict[LabeledNull, Value]) -> None:
        for m in self.members:
            m.tuple = m.tuple.substitute(bindings)
            # a bound fresh null is gone; whatever replaced it is not fresh
            m.fresh_nulls = frozenset(
                x for x in m.fresh_nulls if x not in bindings
            ) & m.tuple.nulls()


@dataclass
class NegativeFrontierSet:
    """Deletion candidates for one backward-chase violation."""

    candidates: list[tuple[int, TupleData]]


@dataclass
class FrontierRequest:
    request_id: int
    update_number: int
    kind: str  # "positive" | "negative"
    violation_key: tuple
    tgd_id: str
    # positive: (member, unify candidates); negative: deletion candidates
    members: list[tuple[PositiveFrontierTuple, list[tuple[int, TupleData]]]] = field(
        default_factory=list
    )
    candidates: list[tuple[int, TupleData]] = field(default_factory=list)
    live: bool = True


@dataclass(frozen=True)
class Expand:
    frontier_tuple_id: int


@dataclass(frozen=True)
class Unify:
    frontier_tuple_id: int
    target_tuple_id: int


@dataclass(frozen=True)
class DeleteSubset:
    request_id: int
    tuple_ids: frozenset[int]


FrontierOperation = Union[Expand, Unify, DeleteSubset]


@dataclass
class UpdateRecord:
    number: int
    origin: Origin
    state: UpdateState = UpdateState.RUNNING
    violations: list[Violation] = field(default_factory=list)
    pending: Optional[WriteSet] = None
    groups: dict[tuple, FrontierGroup] = field(default_factory=dict)
    requests: dict[tuple, FrontierRequest] = field(default_factory=dict)
    steps: int = 0
    restarted_as: Optional[int] = None
    restart_of: Optional[int] = None

    @property
    def polarity(self) -> str:
        return self.origin.polarity

    def violation_by_key(self, key: tuple) -> Optional[Violation]:
        for v in self.violations:
            if v.key() == key:
                return v
        return None

    def live_requests(self) -> list[FrontierRequest]:
        return [r for r in self.requests.values() if r.live]

    def find_member(
        self, ft_id: int
    ) -> Optional[tuple[tuple, FrontierGroup, PositiveFrontierTuple]]:
        for key, group in self.groups.items():
            for m in group.members:
                if m.ft_id == ft_id:
                    return key, group, m
        return None


class StepOutcome(Enum):
    CONTINUE = "continue"
    BLOCKED = "blocked"
    FINISHED = "finished"


@dataclass
class StepResult:
    outcome: StepOutcome
    applied: list[AppliedWrite]
    requests: list[FrontierRequest] = field(default_factory=list)


@dataclass
class Deterministic:
    writes: WriteSet


@dataclass
class NeedsFrontier:
    kind: str  # "positive" | "negative"
    members: list[tuple[PositiveFrontierTuple, list[tuple[int, TupleData]]]] = field(
        default_factory=list
    )
    candidates: list[tuple[int, TupleData]] = field(default_factory=list)


RepairResult = Union[Deterministic, NeedsFrontier]


def classify_violation(cause_kind: str) -> ViolationKind:
    """Inserts and null-replacement modifications create lhs-violations;
    deletes create rhs-violations. Nothing else can happen: a replacement
    rewrites every occurrence of a null at once, so rhs support never
    silently breaks."""
    if cause_kind in ("insert", "modify"):
        return ViolationKind.LHS
    if cause_kind == "delete":
        return ViolationKind.RHS
    raise ContractError(f"unknown cause kind {cause_kind!r}")


class ReadRecorder(Protocol):
    def record(self, issuer: int, spec: QuerySpec, answers) -> None:
        ...


class NullReadRecorder:
    def record(self, issuer: int, spec: QuerySpec, answers) -> None:
        pass


DecisionHook = Callable[[int, tuple, dict], None]


def violation_replay_key(tgd_id: str, witness_payloads: Iterable[TupleData]) -> tuple:
    """Identity of a violation for decision replay: the mapping plus the
    canonicalized witness payloads, so the same logical violation is found
    again even when tuple and null ids differ across executions."""
    return (tgd_id, canonical_tuple_set(witness_payloads))


def null_context(view: DatabaseView, payload: TupleData) -> tuple:
    """Renaming-invariant fingerprint of a tuple together with every live
    tuple sharing one of its nulls. Distinguishes isomorphic candidates for
    decision replay: two unknowns look alike in isolation but their other
    occurrences usually differ."""
    nulls = payload.nulls()
    tuples = {(payload.relation, payload.values): payload}
    for null in sorted(nulls, key=lambda x: x.id):
        for _tid, occ in null_occurrences(view, null):
            tuples[(occ.relation, occ.values)] = occ
    return canonical_tuple_set(tuples.values())


# ---------------------------------------------------------------------------
# The engine


class ChaseEngine:
    """Chase execution for updates sharing one multiversion store.

    The engine mutates the store only through run_step; the scheduler is
    responsible for granting steps and for concurrency control around them.
    """

    def __init__(
        self,
        schema: Schema,
        tgds: Iterable[Tgd],
        store: VersionStore,
        nulls: NullFactory,
        recorder: Optional[ReadRecorder] = None,
        decision_hook: Optional[DecisionHook] = None,
    ):
        self.schema = schema
        self.store = store
        self.nulls = nulls
        self.recorder: ReadRecorder = recorder or NullReadRecorder()
        self.decision_hook = decision_hook
        self.tgds_by_id: dict[str, Tgd] = {}
        self.lhs_index: dict[str, list[Tgd]] = {}
        self.rhs_index: dict[str, list[Tgd]] = {}
        for tgd in tgds:
            tgd.validate(schema)
            if tgd.id in self.tgds_by_id:
                raise ContractError(f"duplicate tgd id {tgd.id!r}")
            self.tgds_by_id[tgd.id] = tgd
            for rel in sorted(tgd.lhs_relations()):
                self.lhs_index.setdefault(rel, []).append(tgd)
            for rel in sorted(tgd.rhs_relations()):
                self.rhs_index.setdefault(rel, []).append(tgd)
        self._ft_counter = 1
        self._group_counter = 1
        self._request_counter = 1

    # -- lifecycle --

    def begin_update(
        self, origin: Origin, number: int, validate: bool = True
    ) -> UpdateRecord:
        if validate:
            view = self.store.view(number)
            if origin.kind == "insert":
                assert origin.tuple is not None
                check_arity(self.schema, origin.tuple)
            elif origin.kind == "delete":
                if origin.tuple_id is None or view.get(origin.tuple_id) is None:
                    raise ContractError(
                        f"delete target {origin.tuple_id!r} does not exist"
                    )
            elif origin.kind == "null_replace":
                assert origin.null is not None and origin.replacement is not None
                if not null_occurrences(view, origin.null):
                    raise ContractError(
                        f"labeled null {origin.null!r} does not occur in the database"
                    )
            else:
                raise ContractError(f"unknown origin kind {origin.kind!r}")
        return UpdateRecord(number=number, origin=origin)

    # -- the chase step --

    def run_step(self, u: UpdateRecord) -> StepResult:
        if u.state is not UpdateState.RUNNING:
            raise ContractError(f"update {u.number} is {u.state.value}, cannot step")
        ws = self._take_pending(u)
        self._check_polarity(u, ws)
        applied = self.store.apply(u.number, ws)
        u.steps += 1
        view = self.store.view(u.number)
        self._detect_violations(u, applied, view)
        return self._plan_next(u, view, applied)

    def _take_pending(self, u: UpdateRecord) -> WriteSet:
        if u.pending is not None:
            ws = u.pending
            u.pending = None
            return ws
        if u.steps > 0:
            raise ContractError(f"update {u.number} has no pending writes")
        return self._origin_writes(u)

    def _origin_writes(self, u: UpdateRecord) -> WriteSet:
        o = u.origin
        ws = WriteSet()
        if o.kind == "insert":
            # the set-semantics duplicate check is a read: whether this
            # payload is live decides whether the insert applies, so a later
            # change to that answer must be able to invalidate the update
            view = self.store.view(u.number)
            answers = find_more_specific(view, o.tuple, strict=False)
            self.recorder.record(
                u.number, SpecificityQuerySpec(o.tuple.relation, o.tuple), answers
            )
            ws.add(Insert(o.tuple))
        elif o.kind == "delete":
            if o.tuple is not None:
                view = self.store.view(u.number)
                answers = find_more_specific(view, o.tuple, strict=False)
                self.recorder.record(
                    u.number, SpecificityQuerySpec(o.tuple.relation, o.tuple), answers
                )
            ws.add(Delete(o.tuple_id))
        else:
            view = self.store.view(u.number)
            occurrences = null_occurrences(view, o.null)
            self.recorder.record(u.number, NullOccurrenceQuerySpec(o.null), occurrences)
            bindings = {o.null: o.replacement}
            for tid, payload in occurrences:
                ws.add(Modify(tid, payload.substitute(bindings), ((o.null, o.replacement),)))
        return ws

    def _check_polarity(self, u: UpdateRecord, ws: WriteSet) -> None:
        for w in ws:
            if u.polarity == "positive" and isinstance(w, Delete):
                raise ContractError(f"positive update {u.number} may not delete")
            if u.polarity == "negative" and not isinstance(w, Delete):
                raise ContractError(f"negative update {u.number} may only delete")

    def _detect_violations(
        self, u: UpdateRecord, applied: list[AppliedWrite], view: DatabaseView
    ) -> None:
        for w in applied:
            if not w.applied:
                continue
            if w.kind in ("insert", "modify"):
                tgds = self.lhs_index.get(w.relation, [])
            else:
                tgds = self.rhs_index.get(w.relation, [])
            kind = classify_violation(w.kind)
            for tgd in tgds:
                spec = build_violation_query(tgd, w)
                if not spec.anchors:
                    continue
                answers = evaluate(spec, view)
                self.recorder.record(u.number, spec, answers)
                self._enqueue_violations(u, tgd, answers, kind)

    def _enqueue_violations(self, u: UpdateRecord, tgd: Tgd, answers, kind) -> None:
        grouped: dict[tuple, tuple[dict, list[tuple[int, ...]]]] = {}
        for assignment, witness in answers:
            frontier = {x: assignment[x] for x in tgd.frontier_vars}
            key = (tgd.id, tuple(sorted(frontier.items(), key=lambda kv: kv[0])))
            if key not in grouped:
                grouped[key] = (frontier, [])
            if witness not in grouped[key][1]:
                grouped[key][1].append(witness)
        for key, (frontier, witnesses) in grouped.items():
            existing = u.violation_by_key(key)
            if existing is not None:
                for w in witnesses:
                    if w not in existing.witnesses:
                        existing.witnesses.append(w)
            else:
                u.violations.append(Violation(tgd.id, frontier, witnesses, kind))

    def _plan_next(
        self, u: UpdateRecord, view: DatabaseView, applied: list[AppliedWrite]
    ) -> StepResult:
        u.violations = [v for v in u.violations if self._refresh_violation(u, v, view)]
        self._drop_stale_frontier_state(u)

        frontier_plans: list[tuple[Violation, NeedsFrontier]] = []
        for v in list(u.violations):
            repair = self._repair(u, v, view)
            if isinstance(repair, Deterministic):
                u.violations.remove(v)
                self._discard_frontier_state(u, v.key())
                if not repair.writes:
                    continue  # repaired by an earlier side effect
                self._check_polarity(u, repair.writes)
                u.pending = repair.writes
                return StepResult(StepOutcome.CONTINUE, applied)
            frontier_plans.append((v, repair))

        if not u.violations:
            u.state = UpdateState.FINISHED
            u.requests.clear()
            u.groups.clear()
            return StepResult(StepOutcome.FINISHED, applied)

        requests = [
            self._ensure_request(u, v, plan) for v, plan in frontier_plans
        ]
        u.state = UpdateState.BLOCKED
        return StepResult(StepOutcome.BLOCKED, applied, requests)

    def _refresh_violation(self, u: UpdateRecord, v: Violation, view: DatabaseView) -> bool:
        """Drop witnesses that no longer match and report whether the
        violation is still live (some witness remains and the rhs is still
        unsatisfied under its assignment).

        A drop is itself a read: deciding that a queued violation was
        repaired by someone else's side effect consults the current state,
        so the verdict is recorded as a re-posed bound violation query. If
        the repairer later aborts, the record is what pulls this update
        down with it."""
        tgd = self.tgds_by_id[v.tgd_id]
        kept = []
        for witness in v.witnesses:
            assignment: dict[str, Value] = {}
            ok = True
            for atom, tid in zip(tgd.lhs, witness):
                payload = view.get(tid)
                if payload is None:
                    ok = False
                    break
                ext = _match_atom(atom, payload, assignment)
                if ext is None:
                    ok = False
                    break
                assignment = ext
            if not ok:
                continue
            frontier = {x: assignment[x] for x in tgd.frontier_vars}
            if frontier != v.assignment:
                continue  # the witness now backs a different assignment
            kept.append(witness)
        if kept:
            v.witnesses = kept
            binding = dict(v.assignment)
            if not match_conjunction(view, tgd.rhs, binding=binding, limit=1):
                return True
        self._record_refresh_drop(u, v, tgd, view)
        return False

    def _record_refresh_drop(
        self, u: UpdateRecord, v: Violation, tgd: Tgd, view: DatabaseView
    ) -> None:
        binding = tuple(
            sorted(
                ((name, val) for name, val in v.assignment.items()),
                key=lambda kv: kv[0],
            )
        )
        spec = ViolationQuerySpec(
            tgd=tgd,
            cause_kind="refresh",
            anchors=(AnchorBinding(atom_index=None, pinned_tuple_id=None, binding=binding),),
        )
        self.recorder.record(u.number, spec, evaluate(spec, view))

    def _drop_stale_frontier_state(self, u: UpdateRecord) -> None:
        live_keys = {v.key() for v in u.violations}
        for key in list(u.groups):
            if key not in live_keys:
                del u.groups[key]
        for key in list(u.requests):
            if key not in live_keys:
                u.requests[key].live = False
                del u.requests[key]

    def _discard_frontier_state(self, u: UpdateRecord, key: tuple) -> None:
        u.groups.pop(key, None)
        req = u.requests.pop(key, None)
        if req is not None:
            req.live = False

    # -- repairs --

    def _repair(self, u: UpdateRecord, v: Violation, view: DatabaseView) -> RepairResult:
        if v.kind is ViolationKind.LHS:
            return self.repair_forward(u, v, view)
        return self.repair_backward(u, v, view)

    def repair_forward(
        self, u: UpdateRecord, v: Violation, view: DatabaseView
    ) -> RepairResult:
        """Generate the missing rhs tuples. Every generated tuple lacking a
        strictly more specific live counterpart can be inserted outright; if
        any generated tuple has one, the whole firing is handed to the
        frontier as one sibling group."""
        tgd = self.tgds_by_id[v.tgd_id]
        key = v.key()
        group = u.groups.get(key)
        if group is None:
            group = self._generate_group(u, v, tgd)
            u.groups[key] = group

        # one specificity read per member answers both questions: a literally
        # equal live tuple means the member needs no write at all, any other
        # more specific counterpart (a merely isomorphic one included) makes
        # the firing ambiguous. Isomorphic counterparts must block: treating
        # them as insertable lets a cyclic mapping regenerate fresh copies of
        # the same unknown forever and the stratum never terminates.
        presented: list[tuple[PositiveFrontierTuple, list[tuple[int, TupleData]]]] = []
        ambiguous = False
        remaining = []
        for m in group.members:
            answers = find_more_specific(view, m.tuple, strict=False)
            self.recorder.record(
                u.number, SpecificityQuerySpec(m.tuple.relation, m.tuple), answers
            )
            if any(payload == m.tuple for _tid, payload in answers):
                continue  # already present
            remaining.append(m)
            candidates = [
                (tid, payload) for tid, payload in answers if payload != m.tuple
            ]
            if candidates:
                ambiguous = True
            presented.append((m, candidates))
        group.members = remaining

        if not ambiguous:
            ws = WriteSet()
            for m, _ in presented:
                ws.add(Insert(m.tuple))
            return Deterministic(ws)

        # correction queries for nulls that were not freshly generated here
        for m, candidates in presented:
            if not candidates:
                continue
            for null in sorted(m.tuple.nulls() - m.fresh_nulls, key=lambda x: x.id):
                self.recorder.record(
                    u.number, NullOccurrenceQuerySpec(null), null_occurrences(view, null)
                )
        return NeedsFrontier(kind="positive", members=presented)

    def _generate_group(self, u: UpdateRecord, v: Violation, tgd: Tgd) -> FrontierGroup:
        env: dict[str, Value] = dict(v.assignment)
        for z in sorted(tgd.exist_vars):
            env[z] = self.nulls.fresh()
        fresh = {env[z] for z in tgd.exist_vars}
        witness_payloads = self._witness_payloads(u, v)
        gid = self._group_counter
        self._group_counter += 1
        members = []
        for ordinal, atom in enumerate(tgd.rhs):
            values = tuple(
                env[t.name] if isinstance(t, Var) else t for t in atom.terms
            )
            t = TupleData(atom.relation, values)
            members.append(
                PositiveFrontierTuple(
                    ft_id=self._ft_counter,
                    ordinal=ordinal,
                    tuple=t,
                    fresh_nulls=frozenset(fresh) & t.nulls(),
                    tgd_id=tgd.id,
                    witness=witness_payloads,
                    group_id=gid,
                )
            )
            self._ft_counter += 1
        return FrontierGroup(group_id=gid, members=members)

    def _witness_payloads(self, u: UpdateRecord, v: Violation) -> tuple[TupleData, ...]:
        view = self.store.view(u.number)
        payloads = []
        seen = set()
        for witness in v.witnesses:
            for tid in witness:
                payload = view.get(tid)
                if payload is not None and (tid not in seen):
                    seen.add(tid)
                    payloads.append(payload)
        return tuple(payloads)

    def repair_backward(
        self, u: UpdateRecord, v: Violation, view: DatabaseView
    ) -> RepairResult:
        """Candidates are the witness tuples; deleting a hitting set of the
        lhs matches repairs the violation. A single candidate is deleted
        outright, more than one defers the choice to the frontier. No reads
        beyond the already-known witnesses are required."""
        candidate_ids = sorted({tid for witness in v.witnesses for tid in witness})
        candidates = [(tid, view.get(tid)) for tid in candidate_ids]
        candidates = [(tid, p) for tid, p in candidates if p is not None]
        if len(candidates) == 1:
            ws = WriteSet()
            ws.add(Delete(candidates[0][0]))
            return Deterministic(ws)
        return NeedsFrontier(kind="negative", candidates=candidates)

    def _ensure_request(
        self, u: UpdateRecord, v: Violation, plan: NeedsFrontier
    ) -> FrontierRequest:
        key = v.key()
        req = u.requests.get(key)
        if req is None:
            req = FrontierRequest(
                request_id=self._request_counter,
                update_number=u.number,
                kind=plan.kind,
                violation_key=key,
                tgd_id=v.tgd_id,
            )
            self._request_counter += 1
            u.requests[key] = req
        req.kind = plan.kind
        req.members = plan.members
        req.candidates = plan.candidates
        req.live = True
        return req

    # -- frontier operations --

    def apply_frontier_op(self, u: UpdateRecord, op: FrontierOperation) -> WriteSet:
        if u.state is not UpdateState.BLOCKED:
            raise FrontierError(
                "stale_request", f"update {u.number} is {u.state.value}"
            )
        if isinstance(op, (Expand, Unify)):
            ws = self._apply_positive(u, op)
        elif isinstance(op, DeleteSubset):
            ws = self._apply_negative(u, op)
        else:
            raise ContractError(f"unknown frontier operation {op!r}")
        u.pending = ws
        u.state = UpdateState.RUNNING
        return ws

    def _apply_positive(self, u: UpdateRecord, op: Union[Expand, Unify]) -> WriteSet:
        found = u.find_member(op.frontier_tuple_id)
        if found is None:
            raise FrontierError(
                "stale_request", f"no live frontier tuple {op.frontier_tuple_id}"
            )
        key, group, member = found
        if key not in u.requests or not u.requests[key].live:
            raise FrontierError("stale_request", "request is no longer live")
        view = self.store.view(u.number)
        if isinstance(op, Expand):
            group.members.remove(member)
            ws = WriteSet()
            ws.add(Insert(member.tuple))
            self._log_decision(
                u,
                key,
                {
                    "op": "expand",
                    "tgd": member.tgd_id,
                    "ordinal": member.ordinal,
                    "member": canonical_tuple(member.tuple),
                },
            )
            return ws
        target_payload = view.get(op.target_tuple_id)
        if target_payload is None:
            raise FrontierError("stale_request", "unify target no longer live")
        if target_payload.relation != member.tuple.relation:
            raise FrontierError("not_more_specific", "target in a different relation")
        from .model import more_specific_than

        if not more_specific_than(target_payload, member.tuple):
            raise FrontierError(
                "not_more_specific", f"{target_payload!r} vs {member.tuple!r}"
            )
        bindings = unification_bindings(member.tuple, target_payload)
        for null in sorted(bindings, key=lambda x: x.id):
            self.recorder.record(
                u.number, NullOccurrenceQuerySpec(null), null_occurrences(view, null)
            )
        target_ctx = null_context(view, target_payload)
        ws = apply_unifier(view, bindings)
        group.members.remove(member)
        for g in u.groups.values():
            g.substitute(bindings)
        self._log_decision(
            u,
            key,
            {
                "op": "unify",
                "tgd": member.tgd_id,
                "ordinal": member.ordinal,
                "member": canonical_tuple(member.tuple),
                "target": canonical_tuple(target_payload),
                "target_ctx": target_ctx,
            },
        )
        return ws

    def _apply_negative(self, u: UpdateRecord, op: DeleteSubset) -> WriteSet:
        req = None
        for r in u.requests.values():
            if r.request_id == op.request_id and r.live:
                req = r
                break
        if req is None or req.kind != "negative":
            raise FrontierError("stale_request", f"no live request {op.request_id}")
        if not op.tuple_ids:
            raise FrontierError("empty_subset", "chosen subset must be nonempty")
        candidate_ids = {tid for tid, _ in req.candidates}
        if not set(op.tuple_ids) <= candidate_ids:
            raise FrontierError(
                "not_subset", f"{sorted(op.tuple_ids)} not within {sorted(candidate_ids)}"
            )
        by_id = dict(req.candidates)
        view = self.store.view(u.number)
        ws = WriteSet()
        for tid in sorted(op.tuple_ids):
            ws.add(Delete(tid))
        chosen = sorted(
            (canonical_tuple(by_id[t]), null_context(view, by_id[t]))
            for t in sorted(op.tuple_ids)
        )
        self._log_decision(
            u,
            req.violation_key,
            {
                "op": "delete_subset",
                "tgd": req.tgd_id,
                "chosen": chosen,
            },
        )
        return ws

    def _log_decision(self, u: UpdateRecord, violation_key: tuple, payload: dict) -> None:
        if self.decision_hook is None:
            return
        v = u.violation_by_key(violation_key)
        witness_payloads = self._witness_payloads(u, v) if v else ()
        replay_key = violation_replay_key(payload["tgd"], witness_payloads)
        self.decision_hook(u.number, replay_key, payload)

    def request_replay_key(self, u: UpdateRecord, req: FrontierRequest) -> tuple:
        """The renaming-invariant identity a recorded decision was filed
        under, recomputed for a live request."""
        v = u.violation_by_key(req.violation_key)
        payloads = self._witness_payloads(u, v) if v else ()
        return violation_replay_key(req.tgd_id, payloads)


Decider = Callable[[UpdateRecord], FrontierOperation]


def run_single_update(
    engine: ChaseEngine,
    u: UpdateRecord,
    decide: Optional[Decider] = None,
    max_steps: int = 10_000,
) -> UpdateRecord:
    """Drive one update to completion with nobody else in the system.

    decide answers frontier requests; without one, a blocked update is an
    error. The step budget guards against runaway chases in tests and
    tooling; production scheduling lives elsewhere.
    """
    steps = 0
    while True:
        if u.state is UpdateState.RUNNING:
            steps += 1
            if steps > max_steps:
                raise EngineError(
                    f"update {u.number} exceeded the step budget ({max_steps})"
                )
            result = engine.run_step(u)
            if result.outcome is StepOutcome.FINISHED:
                return u
        elif u.state is UpdateState.BLOCKED:
            if decide is None:
                raise ContractError(
                    f"update {u.number} blocked on frontier with no decider"
                )
            engine.apply_frontier_op(u, decide(u))
        else:
            return u
