"""Replayable schedule log.

One record per event, line-delimited JSON on disk. The header snapshot
carries everything needed to replay in isolation: schema, mappings, the
initial version chains, and the id counters. Replaying the logged writes
over the snapshot reproduces the final version store exactly; the decision
records let a serial re-execution reuse the run's frontier choices.
"""
from __future__ import annotations

import hashlib
import json
from typing import Any, Iterable, Optional

from .chase import Origin
from .model import Constant, LabeledNull, Schema, Tgd, TupleData, Value
from .mvcc import VersionStore
from .queries import (
    AnchorBinding,
    NullOccurrenceQuerySpec,
    QuerySpec,
    SpecificityQuerySpec,
    ViolationQuerySpec,
)
from .schema_io import parse_document, document_to_dict
from .writes import AppliedWrite


def enc_value(v: Value) -> list:
    if isinstance(v, LabeledNull):
        return ["n", v.id]
    return ["c", v.text]


def dec_value(x) -> Value:
    tag, payload = x
    return LabeledNull(payload) if tag == "n" else Constant(payload)


def enc_tuple(t: Optional[TupleData]):
    if t is None:
        return None
    return {"rel": t.relation, "vals": [enc_value(v) for v in t.values]}


def dec_tuple(x) -> Optional[TupleData]:
    if x is None:
        return None
    return TupleData(x["rel"], tuple(dec_value(v) for v in x["vals"]))


def enc_applied(w: AppliedWrite) -> dict:
    return {
        "kind": w.kind,
        "tid": w.tuple_id,
        "rel": w.relation,
        "old": enc_tuple(w.old_tuple),
        "new": enc_tuple(w.new_tuple),
        "by": w.updater,
        "lsn": w.lsn,
        "applied": w.applied,
    }


def dec_applied(x: dict) -> AppliedWrite:
    return AppliedWrite(
        x["kind"],
        x["tid"],
        x["rel"],
        dec_tuple(x["old"]),
        dec_tuple(x["new"]),
        x["by"],
        x["lsn"],
        x["applied"],
    )


def enc_origin(o: Origin) -> dict:
    return {
        "kind": o.kind,
        "tuple": enc_tuple(o.tuple),
        "tuple_id": o.tuple_id,
        "null": o.null.id if o.null else None,
        "replacement": o.replacement.text if o.replacement else None,
    }


def dec_origin(x: dict) -> Origin:
    return Origin(
        kind=x["kind"],
        tuple=dec_tuple(x["tuple"]),
        tuple_id=x["tuple_id"],
        null=LabeledNull(x["null"]) if x["null"] is not None else None,
        replacement=Constant(x["replacement"]) if x["replacement"] is not None else None,
    )


def enc_spec(spec: QuerySpec) -> dict:
    if isinstance(spec, ViolationQuerySpec):
        return {
            "type": "violation",
            "tgd": spec.tgd.id,
            "cause": spec.cause_kind,
            "anchors": [
                {
                    "atom": a.atom_index,
                    "tid": a.pinned_tuple_id,
                    "binding": [[k, enc_value(v)] for k, v in a.binding],
                }
                for a in spec.anchors
            ],
        }
    if isinstance(spec, SpecificityQuerySpec):
        return {"type": "specificity", "rel": spec.relation, "probe": enc_tuple(spec.probe)}
    if isinstance(spec, NullOccurrenceQuerySpec):
        return {"type": "null_occurrence", "null": spec.null.id}
    raise TypeError(f"unknown spec {spec!r}")


def dec_spec(x: dict, tgds_by_id: dict[str, Tgd]) -> QuerySpec:
    if x["type"] == "violation":
        anchors = tuple(
            AnchorBinding(
                atom_index=a["atom"],
                pinned_tuple_id=a["tid"],
                binding=tuple((k, dec_value(v)) for k, v in a["binding"]),
            )
            for a in x["anchors"]
        )
        return ViolationQuerySpec(tgd=tgds_by_id[x["tgd"]], cause_kind=x["cause"], anchors=anchors)
    if x["type"] == "specificity":
        return SpecificityQuerySpec(x["rel"], dec_tuple(x["probe"]))
    return NullOccurrenceQuerySpec(LabeledNull(x["null"]))


def canon_json(x: Any) -> str:
    """Stable string form of canonical keys (nested tuples become lists)."""

    def norm(y):
        if isinstance(y, tuple):
            return [norm(e) for e in y]
        if isinstance(y, list):
            return [norm(e) for e in y]
        if isinstance(y, dict):
            return {k: norm(v) for k, v in sorted(y.items())}
        return y

    return json.dumps(norm(x), sort_keys=True, separators=(",", ":"))


class ScheduleLog:
    """Ordered event records for one engine run."""

    def __init__(self, records: Optional[list[dict]] = None):
        self.records: list[dict] = records or []

    # -- writers --

    def add(self, rec: dict) -> None:
        self.records.append(rec)

    def snapshot(
        self,
        schema: Schema,
        tgds: Iterable[Tgd],
        store: VersionStore,
        null_counter: int,
        info: Optional[dict] = None,
    ) -> None:
        chains = {
            str(tid): [
                {"by": by, "rel": rel, "vals": [enc_value(v) for v in vals], "live": live}
                for (by, rel, vals, live) in chain
            ]
            for tid, chain in store.dump_chains().items()
        }
        self.add(
            {
                "kind": "snapshot",
                "document": document_to_dict(schema, list(tgds)),
                "chains": chains,
                "next_tuple_id": store._next_tuple_id,
                "next_lsn": store._next_lsn,
                "null_counter": null_counter,
                "info": info or {},
            }
        )

    def begin(self, number: int, origin: Origin) -> None:
        self.add({"kind": "begin", "number": number, "origin": enc_origin(origin)})

    def step(self, number: int, applied: list[AppliedWrite], outcome: str) -> None:
        self.add(
            {
                "kind": "step",
                "number": number,
                "writes": [enc_applied(w) for w in applied],
                "outcome": outcome,
            }
        )

    def decision(self, number: int, replay_key, payload: dict) -> None:
        self.add(
            {
                "kind": "decision",
                "number": number,
                "key": canon_json(replay_key),
                "payload": canon_json(payload),
            }
        )

    def abort(self, victim: int, restarted_as: Optional[int], direct: bool, source: int) -> None:
        self.add(
            {
                "kind": "abort",
                "number": victim,
                "restarted_as": restarted_as,
                "direct": direct,
                "source": source,
            }
        )

    def terminate(self, number: int) -> None:
        self.add({"kind": "terminate", "number": number})

    # -- readers --

    def header(self) -> dict:
        if not self.records or self.records[0]["kind"] != "snapshot":
            raise ValueError("log has no snapshot header")
        return self.records[0]

    def context(self) -> tuple[Schema, list[Tgd]]:
        schema, tgds, _ = parse_document(self.header()["document"])
        return schema, tgds

    def initial_store(self) -> VersionStore:
        header = self.header()
        schema, _, _ = parse_document(header["document"])
        store = VersionStore(schema)
        for tid_s, chain in sorted(header["chains"].items(), key=lambda kv: int(kv[0])):
            tid = int(tid_s)
            for v in chain:
                payload = TupleData(v["rel"], tuple(dec_value(x) for x in v["vals"]))
                store._append_version(tid, v["by"], payload, v["live"], store._new_lsn())
        store._next_tuple_id = header["next_tuple_id"]
        store._next_lsn = header["next_lsn"]
        return store

    def by_kind(self, kind: str) -> list[dict]:
        return [r for r in self.records if r["kind"] == kind]

    def terminated_numbers(self) -> list[int]:
        return sorted(r["number"] for r in self.by_kind("terminate"))

    def aborted_numbers(self) -> set[int]:
        return {r["number"] for r in self.by_kind("abort")}

    def origins(self) -> dict[int, Origin]:
        return {r["number"]: dec_origin(r["origin"]) for r in self.by_kind("begin")}

    # -- serialization --

    def dump_lines(self) -> list[str]:
        return [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self.records]

    def save(self, path) -> None:
        with open(path, "w") as f:
            for line in self.dump_lines():
                f.write(line + "\n")

    @classmethod
    def load(cls, path) -> "ScheduleLog":
        records = []
        with open(path) as f:
            for line in f:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        return cls(records)

    def hash(self) -> str:
        h = hashlib.sha256()
        for line in self.dump_lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()


def serialize_schedule(log: ScheduleLog) -> ScheduleLog:
    """Stable sort of per-update records by update number, preserving each
    update's internal order. The snapshot header stays first."""
    header = [r for r in log.records if r["kind"] == "snapshot"]
    body = [r for r in log.records if r["kind"] != "snapshot"]
    ordered = sorted(
        enumerate(body), key=lambda pair: (pair[1].get("number", 0), pair[0])
    )
    return ScheduleLog(header + [r for _, r in ordered])


def rebuild_store_from_log(log: ScheduleLog, exclude: Optional[set[int]] = None) -> VersionStore:
    """Reconstruct the version store by applying the logged writes verbatim
    over the snapshot, skipping aborted updates (their versions were
    physically removed). Equal to the live store's canonical dump."""
    exclude = set(exclude or set()) | log.aborted_numbers()
    store = log.initial_store()
    max_tid = store._next_tuple_id - 1
    max_lsn = store._next_lsn - 1
    for rec in log.by_kind("step"):
        for wx in rec["writes"]:
            w = dec_applied(wx)
            max_tid = max(max_tid, w.tuple_id)
            max_lsn = max(max_lsn, w.lsn)
            if not w.applied or w.updater in exclude:
                continue
            if w.kind == "insert":
                store._append_version(w.tuple_id, w.updater, w.new_tuple, True, w.lsn)
            elif w.kind == "delete":
                store._append_version(w.tuple_id, w.updater, w.old_tuple, False, w.lsn)
            else:
                store._append_version(w.tuple_id, w.updater, w.new_tuple, True, w.lsn)
    store._next_tuple_id = max_tid + 1
    store._next_lsn = max_lsn + 1
    return store
