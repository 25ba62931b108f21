"""Optimistic multiversion step scheduler.

Updates interleave at chase-step granularity. Every step's writes are
checked against the stored read queries of higher-numbered live updates;
a write that retroactively changes a stored answer aborts the reader and,
per the configured cascade algorithm, whichever updates read from it:

  naive    abort every live update numbered above the victim
  coarse   relation-footprint overestimate of read dependencies
  precise  exact read dependencies, computed per read against each
           abortable earlier writer by comparing the answer with and
           without that writer's versions

Abort requests raised while processing one step's writes are consolidated
and executed together once the step is done. An aborted update restarts
from its origin under a fresh (highest) priority number. A finished update
becomes permanent only once every lower-numbered update has finished, so a
late write by a straggler can still invalidate it before that point.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .chase import (
    ChaseEngine,
    Decider,
    FrontierOperation,
    Origin,
    StepOutcome,
    StepResult,
    UpdateRecord,
    UpdateState,
)
from .model import (
    ContractError,
    EngineError,
    NullFactory,
    Schema,
    Tgd,
    more_specific_than,
)
from .mvcc import VersionStore
from .queries import (
    NullOccurrenceQuerySpec,
    QuerySpec,
    ReadQueryRecord,
    SpecificityQuerySpec,
    ViolationQuerySpec,
    evaluate,
    fingerprint,
    retroactively_changes,
)
from .schedlog import ScheduleLog, enc_spec
from .writes import AppliedWrite

LIVE_STATES = (UpdateState.RUNNING, UpdateState.BLOCKED, UpdateState.FINISHED)

CASCADE_ALGORITHMS = ("naive", "coarse", "precise")


@dataclass
class SchedulerConfig:
    cascade: str = "precise"
    conflict_detection: bool = True
    step_budget: int = 500_000
    audit_rollback: bool = False
    collect_dependency_audit: bool = False

    def __post_init__(self):
        if self.cascade not in CASCADE_ALGORITHMS:
            raise ContractError(f"unknown cascade algorithm {self.cascade!r}")


@dataclass
class Metrics:
    submitted: int = 0
    aborts: int = 0
    cascading_abort_requests: int = 0
    direct_conflict_aborts: int = 0
    steps: int = 0
    wall_clock_s: float = 0.0

    @property
    def updates_run(self) -> int:
        return self.submitted + self.aborts

    @property
    def per_update_time_s(self) -> float:
        return self.wall_clock_s / self.updates_run if self.updates_run else 0.0


@dataclass(frozen=True)
class DependencyEdge:
    reader: int
    writer: int
    rec_id: int


class Scheduler:
    """Single-threaded owner of the version store and chase engine."""

    def __init__(
        self,
        schema: Schema,
        tgds: Iterable[Tgd],
        store: Optional[VersionStore] = None,
        nulls: Optional[NullFactory] = None,
        config: Optional[SchedulerConfig] = None,
        start_number: int = 1,
        log: Optional[ScheduleLog] = None,
    ):
        self.schema = schema
        self.tgds = list(tgds)
        self.store = store or VersionStore(schema)
        self.nulls = nulls or NullFactory()
        self.config = config or SchedulerConfig()
        self.log = log if log is not None else ScheduleLog()
        self.engine = ChaseEngine(
            schema,
            self.tgds,
            self.store,
            self.nulls,
            recorder=self,
            decision_hook=self._on_decision,
        )
        self.updates: dict[int, UpdateRecord] = {}
        self._next_number = start_number
        self.records: list[ReadQueryRecord] = []
        self._rec_counter = 1
        self.edges: list[DependencyEdge] = []
        self._writes_by_updater: dict[int, list[AppliedWrite]] = {}
        self.metrics = Metrics()
        self.dependency_audit: list[dict] = []
        self.abort_lsns: dict[int, int] = {}
        self._in_step: Optional[UpdateRecord] = None
        if not self.log.records:
            self.log.snapshot(schema, self.tgds, self.store, self.nulls.next_id)

    # -- submission --

    def submit(self, origin: Origin, validate: bool = True) -> UpdateRecord:
        number = self._next_number
        self._next_number += 1
        if origin.kind == "delete" and origin.tuple is None:
            # remember the target payload so replays can re-resolve the id
            payload = self.store.view(number).get(origin.tuple_id)
            if payload is not None:
                from dataclasses import replace as dc_replace

                origin = dc_replace(origin, tuple=payload)
        u = self.engine.begin_update(origin, number, validate=validate)
        self.updates[number] = u
        self.metrics.submitted += 1
        self.log.begin(number, origin)
        return u

    # -- read recording (engine callback) --

    def record(self, issuer: int, spec: QuerySpec, answers) -> None:
        u = self.updates.get(issuer)
        step_index = u.steps if u else 0
        rec = ReadQueryRecord(
            rec_id=self._rec_counter,
            issuer=issuer,
            step_index=step_index,
            lsn=self.store.lsn,
            spec=spec,
            fingerprint=fingerprint(spec, answers),
        )
        self._rec_counter += 1
        self.records.append(rec)
        self.log.add(
            {
                "kind": "read",
                "number": issuer,
                "rec_id": rec.rec_id,
                "lsn": rec.lsn,
                "spec": enc_spec(spec),
            }
        )
        if self.config.cascade == "precise" or self.config.collect_dependency_audit:
            self._compute_read_dependencies(rec)

    def _abortable_writers(self, below: int) -> list[int]:
        out = []
        for n, u in self.updates.items():
            if n < below and u.state in LIVE_STATES and self._writes_by_updater.get(n):
                out.append(n)
        return sorted(out)

    def _footprint_touches(self, writer: int, spec: QuerySpec) -> bool:
        writes = self._writes_by_updater.get(writer, ())
        if isinstance(spec, NullOccurrenceQuerySpec):
            for w in writes:
                if (w.old_tuple and spec.null in w.old_tuple.values) or (
                    w.new_tuple and spec.null in w.new_tuple.values
                ):
                    return True
            return False
        relations = spec.relations()
        return any(w.relation in relations for w in writes)

    def _compute_read_dependencies(self, rec: ReadQueryRecord) -> None:
        """Exact dependencies at read time: writer j influences this read iff
        the answer differs when every version j has written is removed."""
        for j in self._abortable_writers(rec.issuer):
            if not self._footprint_touches(j, rec.spec):
                continue
            minus = self.store.view(rec.issuer, exclude=frozenset([j]))
            if fingerprint(rec.spec, evaluate(rec.spec, minus)) != rec.fingerprint:
                self.edges.append(DependencyEdge(rec.issuer, j, rec.rec_id))

    def _on_decision(self, number: int, replay_key, payload: dict) -> None:
        self.log.decision(number, replay_key, payload)

    # -- stepping --

    def step_update(self, number: int) -> StepResult:
        u = self.updates[number]
        self.metrics.steps += 1
        if self.metrics.steps > self.config.step_budget:
            raise EngineError(
                f"step budget {self.config.step_budget} exhausted; "
                f"live={[n for n, x in self.updates.items() if x.state in LIVE_STATES]}"
            )
        self._in_step = u
        try:
            result = self.engine.run_step(u)
        finally:
            self._in_step = None
        for w in result.applied:
            if w.applied:
                self._writes_by_updater.setdefault(number, []).append(w)
        self.log.step(number, result.applied, result.outcome.value)
        if self.config.conflict_detection:
            direct = self.detect_conflicts(result.applied)
            self._consolidate_aborts(direct)
        self._finalize_sweep()
        return result

    def frontier_op(self, number: int, op: FrontierOperation):
        u = self.updates[number]
        return self.engine.apply_frontier_op(u, op)

    # -- conflict detection --

    def detect_conflicts(self, applied: list[AppliedWrite]) -> set[int]:
        """Updates directly conflicting with the just-performed writes: any
        higher-numbered live update holding a read record, taken before the
        write, whose answer the write retroactively changes.

        The check view is the reader's view as of the read: the reader's own
        writes performed after the read are hidden, so they cannot mask a
        change to an answer the reader already acted on. Writes by other
        surviving lower-numbered updates stay visible; each of them passed
        this same check when it landed, so the recorded answer is still what
        this view yields without the new write.
        """
        direct: set[int] = set()
        views: dict[tuple[int, int], object] = {}
        for w in applied:
            if not w.applied:
                continue
            for rec in self.records:
                i = rec.issuer
                if i <= w.updater or i in direct:
                    continue
                ui = self.updates.get(i)
                if ui is None or ui.state not in LIVE_STATES:
                    continue
                if rec.lsn >= w.lsn:
                    continue
                view = views.get((i, rec.lsn))
                if view is None:
                    view = self.store.view(i, self_cap=(i, rec.lsn))
                    views[(i, rec.lsn)] = view
                if retroactively_changes(w, rec, view):
                    direct.add(i)
        return direct

    # -- cascading abort algorithms --

    def _live_numbers(self) -> list[int]:
        return sorted(
            n for n, u in self.updates.items() if u.state in LIVE_STATES
        )

    def cascade_naive(self, victim: int) -> set[int]:
        return {n for n in self._live_numbers() if n > victim}

    def cascade_precise(self, victim: int) -> set[int]:
        readers: dict[int, set[int]] = {}
        live = set(self._live_numbers())
        for e in self.edges:
            if e.reader in live:
                readers.setdefault(e.writer, set()).add(e.reader)
        return self._closure(victim, lambda x: readers.get(x, set()))

    def cascade_coarse(self, victim: int) -> set[int]:
        """Relation-footprint overestimate for violation queries plus exact
        content checks for correction queries, no database access."""
        live = set(self._live_numbers())

        def readers_of(writer: int) -> set[int]:
            out = set()
            writes = self._writes_by_updater.get(writer, ())
            if not writes:
                return out
            for rec in self.records:
                if rec.issuer <= writer or rec.issuer not in live:
                    continue
                # a write at the record's own lsn was visible to the read
                prior = [w for w in writes if w.lsn <= rec.lsn]
                if not prior:
                    continue
                spec = rec.spec
                if isinstance(spec, ViolationQuerySpec):
                    relations = spec.relations()
                    if any(w.relation in relations for w in prior):
                        out.add(rec.issuer)
                elif isinstance(spec, SpecificityQuerySpec):
                    for w in prior:
                        if self._specificity_touches(spec, w):
                            out.add(rec.issuer)
                            break
                else:
                    for w in prior:
                        if self._null_touches(spec, w):
                            out.add(rec.issuer)
                            break
            return out

        return self._closure(victim, readers_of)

    @staticmethod
    def _specificity_touches(spec: SpecificityQuerySpec, w: AppliedWrite) -> bool:
        for payload in (w.old_tuple, w.new_tuple):
            if (
                payload is not None
                and payload.relation == spec.relation
                and more_specific_than(payload, spec.probe)
            ):
                return True
        return False

    @staticmethod
    def _null_touches(spec: NullOccurrenceQuerySpec, w: AppliedWrite) -> bool:
        for payload in (w.old_tuple, w.new_tuple):
            if payload is not None and spec.null in payload.values:
                return True
        return False

    def _closure(self, victim: int, readers_of: Callable[[int], set[int]]) -> set[int]:
        out: set[int] = set()
        frontier = [victim]
        while frontier:
            x = frontier.pop()
            for r in sorted(readers_of(x)):
                if r != victim and r not in out:
                    out.add(r)
                    frontier.append(r)
        return out

    def cascade_set(self, victim: int) -> set[int]:
        if self.config.cascade == "naive":
            return self.cascade_naive(victim)
        if self.config.cascade == "coarse":
            return self.cascade_coarse(victim)
        return self.cascade_precise(victim)

    # -- abort execution --

    def _consolidate_aborts(self, direct: set[int]) -> None:
        if not direct:
            return
        all_victims: dict[int, tuple[bool, int]] = {}
        for i in sorted(direct):
            all_victims.setdefault(i, (True, i))
        for i in sorted(direct):
            cascade = self.cascade_set(i)
            if self.config.collect_dependency_audit:
                self.dependency_audit.append(
                    {
                        "victim": i,
                        "cascade": sorted(cascade),
                        "direct": sorted(direct),
                        "at_lsn": self.store.lsn,
                        "live": self._live_numbers(),
                        "abort_lsns": dict(self.abort_lsns),
                        "records": [
                            (r.issuer, r.lsn, enc_spec(r.spec))
                            for r in self.records
                            if r.issuer in self._live_numbers()
                        ],
                    }
                )
            for j in sorted(cascade):
                if j not in direct:
                    self.metrics.cascading_abort_requests += 1
                all_victims.setdefault(j, (False, i))
        self.metrics.direct_conflict_aborts += len(direct)
        for n in sorted(all_victims):
            was_direct, source = all_victims[n]
            self.abort(n, direct=was_direct, source=source)

    def abort(self, number: int, direct: bool = True, source: Optional[int] = None) -> int:
        """Abort a live update: its versions disappear, its frontier requests
        are cancelled, and its origin re-enters the system under a fresh
        priority number. Returns the restarted update's number."""
        u = self.updates[number]
        if u.state is UpdateState.TERMINATED:
            raise ContractError(f"update {number} already terminated; versions are permanent")
        if u.state is UpdateState.ABORTED:
            return u.restarted_as or 0
        self.store.remove_versions_of(number)
        u.state = UpdateState.ABORTED
        for req in u.requests.values():
            req.live = False
        u.requests.clear()
        u.groups.clear()
        u.violations.clear()
        u.pending = None
        self.records = [r for r in self.records if r.issuer != number]
        self.edges = [e for e in self.edges if e.reader != number]
        self._writes_by_updater.pop(number, None)
        self.abort_lsns[number] = self.store.lsn
        self.metrics.aborts += 1
        restart = self.engine.begin_update(u.origin, self._next_number, validate=False)
        restart.restart_of = number
        self._next_number += 1
        self.updates[restart.number] = restart
        u.restarted_as = restart.number
        self.log.abort(number, restart.number, direct, source if source is not None else number)
        self.log.begin(restart.number, u.origin)
        if self.config.audit_rollback:
            self._assert_rollback_exact()
        return restart.number

    def _aborted_numbers(self) -> set[int]:
        return {n for n, u in self.updates.items() if u.state is UpdateState.ABORTED}

    def _assert_rollback_exact(self) -> None:
        from .mvcc import rebuild_from_history

        rebuilt = rebuild_from_history(
            self.schema, self.store.history, exclude=self._aborted_numbers()
        )
        if rebuilt.dump_chains() != self.store.dump_chains():
            raise EngineError("abort rollback diverged from replay-without-victim")

    # -- finality --

    def _finalize_sweep(self) -> None:
        for n in sorted(self.updates):
            u = self.updates[n]
            if u.state in (UpdateState.ABORTED, UpdateState.REJECTED):
                continue
            if u.state is UpdateState.TERMINATED:
                continue
            if u.state is UpdateState.FINISHED:
                u.state = UpdateState.TERMINATED
                self.records = [r for r in self.records if r.issuer != n]
                self.edges = [e for e in self.edges if e.reader != n]
                self.log.terminate(n)
            else:
                break

    # -- driving --

    def live_updates(self) -> list[UpdateRecord]:
        return [self.updates[n] for n in self._live_numbers()]

    def run_until_quiescent(self, oracle: Optional[Decider] = None) -> Metrics:
        """Round-robin over live updates at step granularity until all have
        terminated. Blocked updates consult the oracle when one is given;
        without an oracle the loop stops once only blocked updates remain."""
        started = time.perf_counter()
        while True:
            self._finalize_sweep()
            pending = [
                n
                for n in self._live_numbers()
                if self.updates[n].state
                in (UpdateState.RUNNING, UpdateState.BLOCKED)
            ]
            if not pending:
                break
            progressed = False
            for n in pending:
                u = self.updates.get(n)
                if u is None or u.state not in (UpdateState.RUNNING, UpdateState.BLOCKED):
                    continue
                if u.state is UpdateState.BLOCKED:
                    if oracle is None:
                        continue
                    self.frontier_op(n, oracle(u))
                self.step_update(n)
                progressed = True
            if not progressed:
                break
        self._finalize_sweep()
        self.metrics.wall_clock_s += time.perf_counter() - started
        return self.metrics
