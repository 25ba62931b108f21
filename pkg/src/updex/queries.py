"""Intensional read queries performed by chase steps.

Every read a step performs is one of three shapes: a violation query (a
conjunctive query over a mapping's lhs anti-joined with its rhs, bound by a
just-written tuple), a specificity query (find live tuples more specific
than a generated tuple), or a null-occurrence query (find every tuple
containing a given null). Records of posed queries are immutable and are
what the optimistic scheduler checks later writes against.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

from .matching import (
    Assignment,
    DatabaseView,
    _match_atom,
    match_conjunction,
)
from .model import (
    Constant,
    ContractError,
    LabeledNull,
    TupleData,
    Tgd,
    Value,
    more_specific_than,
)
from .writes import AppliedWrite


# ---------------------------------------------------------------------------
# Query specs


@dataclass(frozen=True)
class AnchorBinding:
    """How a written tuple binds one query variant.

    For insert/modify causes the written tuple is pinned into lhs atom
    `atom_index` by id, so every answer's witness contains it. For delete
    causes the vanished tuple cannot be pinned; instead the variable
    bindings extracted from the matching rhs atom constrain the lhs query.
    """

    atom_index: Optional[int]
    pinned_tuple_id: Optional[int]
    binding: tuple[tuple[str, Value], ...]

    def binding_dict(self) -> Assignment:
        return dict(self.binding)


@dataclass(frozen=True)
class ViolationQuerySpec:
    """SELECT * FROM (lhs query) WHERE NOT EXISTS (SELECT * FROM (rhs query)),
    with structure dictated by the mapping and bindings by the written tuple."""

    tgd: Tgd
    cause_kind: str  # "insert" | "delete" | "modify"
    anchors: tuple[AnchorBinding, ...]

    def relations(self) -> set[str]:
        return self.tgd.relations()


@dataclass(frozen=True)
class SpecificityQuerySpec:
    """All live tuples in the relation more specific than the probe, in the
    non-strict sense: equal tuples and isomorphic ones count. The chase
    derives both of its decisions from this one answer: whether the probe is
    literally present already, and whether strictly more specific
    counterparts make its insertion ambiguous."""

    relation: str
    probe: TupleData

    def relations(self) -> set[str]:
        return {self.relation}


@dataclass(frozen=True)
class NullOccurrenceQuerySpec:
    null: LabeledNull

    def relations(self) -> None:
        return None  # spans every relation


QuerySpec = Union[ViolationQuerySpec, SpecificityQuerySpec, NullOccurrenceQuerySpec]


class ReadKind(Enum):
    VIOLATION = "violation"
    SPECIFICITY = "specificity"
    NULL_OCCURRENCE = "null_occurrence"


def kind_of(spec: QuerySpec) -> ReadKind:
    if isinstance(spec, ViolationQuerySpec):
        return ReadKind.VIOLATION
    if isinstance(spec, SpecificityQuerySpec):
        return ReadKind.SPECIFICITY
    return ReadKind.NULL_OCCURRENCE


@dataclass(frozen=True)
class ReadQueryRecord:
    """One stored read: what was asked, by whom, and what came back."""

    rec_id: int
    issuer: int
    step_index: int
    lsn: int
    spec: QuerySpec
    fingerprint: tuple

    @property
    def kind(self) -> ReadKind:
        return kind_of(self.spec)


# ---------------------------------------------------------------------------
# Building queries


def build_violation_query(tgd: Tgd, write: AppliedWrite) -> ViolationQuerySpec:
    """The query that discovers new violations of one mapping caused by one
    write. Inserts and modifies bind into lhs atoms of the written relation;
    deletes bind through rhs atoms (a delete can only break rhs support)."""
    anchors: list[AnchorBinding] = []
    if write.kind in ("insert", "modify"):
        payload = write.new_tuple
        assert payload is not None
        if payload.relation not in tgd.lhs_relations():
            raise ContractError(
                f"write on {payload.relation} does not touch the lhs of {tgd.id}"
            )
        for i, atom in enumerate(tgd.lhs):
            if atom.relation != payload.relation:
                continue
            bound = _match_atom(atom, payload, {})
            if bound is not None:
                anchors.append(
                    AnchorBinding(
                        atom_index=i,
                        pinned_tuple_id=write.tuple_id,
                        binding=tuple(sorted(bound.items())),
                    )
                )
    elif write.kind == "delete":
        payload = write.old_tuple
        assert payload is not None
        if payload.relation not in tgd.rhs_relations():
            raise ContractError(
                f"delete on {payload.relation} does not touch the rhs of {tgd.id}"
            )
        for atom in tgd.rhs:
            if atom.relation != payload.relation:
                continue
            bound = _match_atom(atom, payload, {})
            if bound is None:
                continue
            # only frontier variables constrain the lhs query
            restricted = {
                v: val for v, val in bound.items() if v in tgd.frontier_vars
            }
            anchors.append(
                AnchorBinding(
                    atom_index=None,
                    pinned_tuple_id=None,
                    binding=tuple(sorted(restricted.items())),
                )
            )
    else:
        raise ContractError(f"unknown write kind {write.kind!r}")
    return ViolationQuerySpec(tgd=tgd, cause_kind=write.kind, anchors=tuple(anchors))


# ---------------------------------------------------------------------------
# Evaluation


def _encode_value(v: Value) -> tuple:
    if isinstance(v, LabeledNull):
        return ("n", v.id)
    return ("c", v.text)


def _encode_tuple(t: TupleData) -> tuple:
    return (t.relation, tuple(_encode_value(v) for v in t.values))


def evaluate_violation(
    spec: ViolationQuerySpec, view: DatabaseView
) -> list[tuple[Assignment, tuple[int, ...]]]:
    """All lhs matches consistent with the spec's anchors whose rhs has no
    matching instantiation. Answers are deduplicated across anchor variants."""
    tgd = spec.tgd
    seen: set[tuple] = set()
    out: list[tuple[Assignment, tuple[int, ...]]] = []
    for anchor in spec.anchors:
        anchors = None
        if anchor.pinned_tuple_id is not None:
            payload = view.get(anchor.pinned_tuple_id)
            if payload is None:
                continue
            anchors = {anchor.atom_index: (anchor.pinned_tuple_id, payload)}
        matches = match_conjunction(
            view, tgd.lhs, binding=anchor.binding_dict(), anchors=anchors
        )
        for assignment, witness in matches:
            key = (tuple(sorted((k, _encode_value(v)) for k, v in assignment.items())), witness)
            if key in seen:
                continue
            seen.add(key)
            frontier = {v: assignment[v] for v in tgd.frontier_vars}
            if not match_conjunction(view, tgd.rhs, binding=frontier, limit=1):
                out.append((assignment, witness))
    return out


def evaluate(spec: QuerySpec, view: DatabaseView):
    """Exact answers for any of the three query shapes."""
    if isinstance(spec, ViolationQuerySpec):
        return evaluate_violation(spec, view)
    if isinstance(spec, SpecificityQuerySpec):
        return [
            (tid, payload)
            for tid, payload in view.scan(spec.relation)
            if more_specific_than(payload, spec.probe)
        ]
    if isinstance(spec, NullOccurrenceQuerySpec):
        out = []
        for rel in view.relations():
            for tid, payload in view.scan(rel):
                if spec.null in payload.values:
                    out.append((tid, payload))
        return out
    raise TypeError(f"unknown query spec {spec!r}")


def fingerprint(spec: QuerySpec, answers) -> tuple:
    """Canonical, order-insensitive form of an answer set. Payloads are
    included so in-place modifications register as changes."""
    if isinstance(spec, ViolationQuerySpec):
        rows = []
        for assignment, witness in answers:
            rows.append(
                (
                    tuple(sorted((k, _encode_value(v)) for k, v in assignment.items())),
                    tuple(witness),
                )
            )
        return tuple(sorted(rows))
    rows = [(tid, _encode_tuple(payload)) for tid, payload in answers]
    return tuple(sorted(rows))


def evaluate_fingerprint(spec: QuerySpec, view: DatabaseView) -> tuple:
    return fingerprint(spec, evaluate(spec, view))


# ---------------------------------------------------------------------------
# Overlay views for marginal before/after comparisons


class OverlayView:
    """A view with a handful of tuples hidden or replaced; used to pose
    "what if this write had not happened" questions."""

    def __init__(self, base: DatabaseView, overrides: dict[int, Optional[TupleData]]):
        self.base = base
        self.overrides = overrides

    def scan(self, relation: str):
        out = [
            (tid, payload)
            for tid, payload in self.base.scan(relation)
            if tid not in self.overrides
        ]
        for tid in sorted(self.overrides):
            payload = self.overrides[tid]
            if payload is not None and payload.relation == relation:
                out.append((tid, payload))
        return out

    def get(self, tuple_id: int) -> Optional[TupleData]:
        if tuple_id in self.overrides:
            return self.overrides[tuple_id]
        return self.base.get(tuple_id)

    def relations(self):
        return self.base.relations()


def views_around_write(view: DatabaseView, w: AppliedWrite) -> tuple[DatabaseView, DatabaseView]:
    """(before, after) views bracketing one applied write, where `view` is a
    view in which the write is already visible."""
    if w.kind == "insert":
        before: DatabaseView = OverlayView(view, {w.tuple_id: None})
    elif w.kind == "delete":
        before = OverlayView(view, {w.tuple_id: w.old_tuple})
    else:
        before = OverlayView(view, {w.tuple_id: w.old_tuple})
    return before, view


# ---------------------------------------------------------------------------
# Retroactive-change checks


def _payload_contains(payload: Optional[TupleData], null: LabeledNull) -> bool:
    return payload is not None and null in payload.values


def _specificity_affected(spec: SpecificityQuerySpec, payload: Optional[TupleData]) -> bool:
    return (
        payload is not None
        and payload.relation == spec.relation
        and more_specific_than(payload, spec.probe)
    )


def _new_witness_check(
    spec: ViolationQuerySpec,
    probe_view: DatabaseView,
    pin: tuple[int, TupleData],
) -> bool:
    """Does some answer of the query, evaluated on probe_view, have the
    pinned tuple in its witness?"""
    tgd = spec.tgd
    tid0, payload0 = pin
    if payload0.relation not in tgd.lhs_relations():
        return False
    for anchor in spec.anchors:
        base_anchors: dict[int, tuple[int, TupleData]] = {}
        if anchor.pinned_tuple_id is not None:
            qp = probe_view.get(anchor.pinned_tuple_id)
            if qp is None:
                continue
            base_anchors[anchor.atom_index] = (anchor.pinned_tuple_id, qp)
        for i, atom in enumerate(tgd.lhs):
            if atom.relation != payload0.relation:
                continue
            anchors = dict(base_anchors)
            if i in anchors and anchors[i][0] != tid0:
                continue
            anchors[i] = (tid0, payload0)
            for assignment, _witness in match_conjunction(
                probe_view, tgd.lhs, binding=anchor.binding_dict(), anchors=anchors
            ):
                frontier = {v: assignment[v] for v in tgd.frontier_vars}
                if not match_conjunction(probe_view, tgd.rhs, binding=frontier, limit=1):
                    return True
    return False


def _rhs_support_flip(
    spec: ViolationQuerySpec,
    live_view: DatabaseView,
    support_view: DatabaseView,
    pin: tuple[int, TupleData],
) -> bool:
    """An answer present only in live_view because the pinned tuple supplies
    rhs support in support_view: some lhs match in live_view whose rhs is
    unsupported there but is completed through the pin on the other side."""
    tgd = spec.tgd
    tid0, payload0 = pin
    if payload0.relation not in tgd.rhs_relations():
        return False
    for anchor in spec.anchors:
        base_anchors: Optional[dict[int, tuple[int, TupleData]]] = None
        if anchor.pinned_tuple_id is not None:
            qp = live_view.get(anchor.pinned_tuple_id)
            if qp is None:
                continue
            base_anchors = {anchor.atom_index: (anchor.pinned_tuple_id, qp)}
        lhs_matches = match_conjunction(
            live_view, tgd.lhs, binding=anchor.binding_dict(), anchors=base_anchors
        )
        checked: set[tuple] = set()
        for assignment, _witness in lhs_matches:
            frontier = {v: assignment[v] for v in tgd.frontier_vars}
            key = tuple(sorted((k, _encode_value(v)) for k, v in frontier.items()))
            if key in checked:
                continue
            checked.add(key)
            if match_conjunction(live_view, tgd.rhs, binding=frontier, limit=1):
                continue  # not an answer on the live side
            for r, ratom in enumerate(tgd.rhs):
                if ratom.relation != payload0.relation:
                    continue
                if match_conjunction(
                    support_view,
                    tgd.rhs,
                    binding=frontier,
                    anchors={r: (tid0, payload0)},
                    limit=1,
                ):
                    return True
    return False


def retroactively_changes(
    w: AppliedWrite, rec: ReadQueryRecord, reader_view: DatabaseView
) -> bool:
    """Would the answer to rec differ had w not been performed?

    reader_view is the issuing update's visible view with w already
    reflected; the conflict scanner passes the reader's view as of the
    read, hiding the reader's own later writes. Correction queries are
    decided from the write's content alone; violation queries by anchored
    queries combining the original query with the written tuple.
    Modifications are handled as a removal of the old payload plus an
    appearance of the new one.
    """
    if not w.applied:
        return False
    spec = rec.spec
    if isinstance(spec, NullOccurrenceQuerySpec):
        return _payload_contains(w.old_tuple, spec.null) or _payload_contains(
            w.new_tuple, spec.null
        )
    if isinstance(spec, SpecificityQuerySpec):
        return _specificity_affected(spec, w.old_tuple) or _specificity_affected(
            spec, w.new_tuple
        )
    # violation query
    relevant = spec.tgd.relations()
    if w.relation not in relevant:
        return False
    before, after = views_around_write(reader_view, w)
    if w.kind == "insert":
        # a new witness appears, or the new tuple completes rhs support and
        # removes an answer that existed before
        if _new_witness_check(spec, after, (w.tuple_id, w.new_tuple)):
            return True
        return _rhs_support_flip(spec, before, after, (w.tuple_id, w.new_tuple))
    if w.kind == "delete":
        # a witness disappears, or rhs support is lost and an answer appears
        if _new_witness_check(spec, before, (w.tuple_id, w.old_tuple)):
            return True
        return _rhs_support_flip(spec, after, before, (w.tuple_id, w.old_tuple))
    # modify: the old payload leaves, the new payload arrives
    if _new_witness_check(spec, before, (w.tuple_id, w.old_tuple)):
        return True
    if _new_witness_check(spec, after, (w.tuple_id, w.new_tuple)):
        return True
    if _rhs_support_flip(spec, after, before, (w.tuple_id, w.old_tuple)):
        return True
    return _rhs_support_flip(spec, before, after, (w.tuple_id, w.new_tuple))


# ---------------------------------------------------------------------------
# Debug rendering


def render_sql(spec: ViolationQuerySpec) -> str:
    """The query in the familiar SELECT ... WHERE NOT EXISTS shape. For log
    output only; not meant to be executable."""
    tgd = spec.tgd

    def atom_sql(atoms, binding: Assignment) -> tuple[str, str]:
        names = [f"{a.relation} AS t{i}" for i, a in enumerate(atoms)]
        conds = []
        seen: dict[str, str] = {}
        for i, a in enumerate(atoms):
            for pos, term in enumerate(a.terms):
                col = f"t{i}.c{pos}"
                if isinstance(term, Constant):
                    conds.append(f"{col} = '{term.text}'")
                elif term.name in binding:
                    v = binding[term.name]
                    lit = f"'{v.text}'" if isinstance(v, Constant) else f"null#{v.id}"
                    conds.append(f"{col} = {lit}")
                elif term.name in seen:
                    conds.append(f"{col} = {seen[term.name]}")
                else:
                    seen[term.name] = col
        return ", ".join(names), " AND ".join(conds) if conds else "TRUE"

    binding = spec.anchors[0].binding_dict() if spec.anchors else {}
    lhs_from, lhs_where = atom_sql(tgd.lhs, binding)
    rhs_from, rhs_where = atom_sql(tgd.rhs, binding)
    return (
        f"SELECT * FROM {lhs_from} WHERE {lhs_where} "
        f"AND NOT EXISTS (SELECT * FROM {rhs_from} WHERE {rhs_where})"
    )
