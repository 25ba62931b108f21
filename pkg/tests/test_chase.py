from __future__ import annotations

import random

import pytest

from updex.chase import (
    ChaseEngine,
    DeleteSubset,
    Expand,
    FrontierError,
    Origin,
    StepOutcome,
    Unify,
    UpdateState,
    classify_violation,
    run_single_update,
)
from updex.model import (
    ContractError,
    LabeledNull,
    NullFactory,
    TupleData,
    ViolationKind,
    Tgd,
)
from updex.mvcc import VersionStore
from updex.writes import Insert, Modify

from .conftest import atom, c, n, travel_data, travel_schema, travel_tgds, tup
from .oracles import bf_violations


def make_engine(schema=None, tgds=None, data=(), updater=0):
    schema = schema or travel_schema()
    tgds = travel_tgds() if tgds is None else tgds
    store = VersionStore(schema)
    nulls = NullFactory()
    engine = ChaseEngine(schema, tgds, store, nulls)
    if data:
        from updex.writes import WriteSet

        ws = WriteSet()
        for t in data:
            ws.add(Insert(t))
        store.apply(updater, ws)
    return engine, store, nulls


def live_payloads(store, relation=None):
    out = [p for _tid, p in store.live_tuples()]
    if relation is not None:
        out = [p for p in out if p.relation == relation]
    return out


def assert_no_violations(engine, store):
    view = store.view(10**9)
    assert bf_violations(view, engine.tgds_by_id.values()) == set()


# -- begin_update and classification --


def test_insert_tour_starts_positive_update_firing_review_mapping():
    engine, store, _ = make_engine(data=travel_data())
    u = engine.begin_update(Origin.insert(tup("T", "Niagara Falls", "ABC Tours")), 1)
    assert u.polarity == "positive"
    run_single_update(engine, u)
    assert u.state is UpdateState.FINISHED
    reviews = live_payloads(store, "R")
    generated = [t for t in reviews if t.values[0] == c("Niagara Falls")]
    assert len(generated) == 1
    assert generated[0].values[1] == c("ABC Tours")
    assert isinstance(generated[0].values[2], LabeledNull)
    assert_no_violations(engine, store)


def test_delete_review_starts_negative_update_with_rhs_violation():
    engine, store, _ = make_engine(data=travel_data())
    victim = [
        tid for tid, t in store.live_tuples() if t.relation == "R"
    ][0]
    u = engine.begin_update(Origin.delete(victim), 1)
    assert u.polarity == "negative"
    result = engine.run_step(u)
    assert result.outcome is StepOutcome.BLOCKED
    assert u.violations[0].kind is ViolationKind.RHS


def test_insert_into_unmentioned_relation_terminates_after_one_step():
    engine, store, _ = make_engine(data=travel_data())
    u = engine.begin_update(
        Origin.insert(TupleData("R", (c("x"), c("y"), c("z")))), 1
    )
    result = engine.run_step(u)
    assert result.outcome is StepOutcome.FINISHED
    assert u.steps == 1


def test_null_replacement_of_missing_null_is_rejected():
    engine, _, _ = make_engine(data=travel_data())
    with pytest.raises(ContractError):
        engine.begin_update(Origin.null_replace(n(999), c("ABC")), 1)


def test_classify_violation_by_cause():
    assert classify_violation("insert") is ViolationKind.LHS
    assert classify_violation("modify") is ViolationKind.LHS
    assert classify_violation("delete") is ViolationKind.RHS


def test_consistent_null_replacement_causes_no_violation():
    # replacing the unknown company updates tour and review rows together,
    # so the review mapping stays satisfied
    x1 = n(501)
    engine, store, nulls = make_engine(
        data=[
            tup("A", "Geneva", "Geneva Winery"),
            TupleData("T", (c("Geneva Winery"), x1)),
            TupleData("R", (c("Geneva Winery"), x1, c("Great!"))),
        ]
    )
    nulls.reserve_above(501)
    u = engine.begin_update(Origin.null_replace(x1, c("ABC Tours")), 1)
    result = engine.run_step(u)
    assert result.outcome is StepOutcome.FINISHED
    assert u.steps == 1
    assert TupleData("T", (c("Geneva Winery"), c("ABC Tours"))) in live_payloads(store, "T")
    assert_no_violations(engine, store)


# -- the airport/city chain, blocking, and unification --


def airport_chain(engine, store):
    u = engine.begin_update(Origin.insert(tup("S", "JFK", "NYC", "Ithaca")), 1)
    inserts = []
    while True:
        result = engine.run_step(u)
        for w in result.applied:
            if w.kind == "insert" and w.applied:
                inserts.append(w.new_tuple)
        if result.outcome is not StepOutcome.CONTINUE:
            return u, result, inserts


def test_airport_insert_runs_deterministic_stratum_then_blocks():
    engine, store, _ = make_engine(data=travel_data())
    u, result, inserts = airport_chain(engine, store)
    assert result.outcome is StepOutcome.BLOCKED
    # the stratum inserted exactly the origin, the city, and the suggestion
    assert inserts[0] == tup("S", "JFK", "NYC", "Ithaca")
    derived = inserts[1:]
    assert len(derived) == 2
    assert derived[0] == tup("C", "NYC")
    assert derived[1].relation == "S"
    assert derived[1].values[2] == c("NYC")
    assert all(isinstance(v, LabeledNull) for v in derived[1].values[:2])
    # blocked with one positive frontier request holding the unknown city
    assert len(result.requests) == 1
    req = result.requests[0]
    assert req.kind == "positive"
    (member, candidates), = req.members
    assert member.tuple.relation == "C"
    assert isinstance(member.tuple.values[0], LabeledNull)
    payloads = {p.values[0] for _tid, p in candidates}
    assert payloads == {c("NYC"), c("Ithaca")}


def test_unify_unknown_city_with_nyc_terminates_chase():
    engine, store, _ = make_engine(data=travel_data())
    u, result, inserts = airport_chain(engine, store)
    req = result.requests[0]
    (member, candidates), = req.members
    target = [tid for tid, p in candidates if p == tup("C", "NYC")][0]
    ws = engine.apply_frontier_op(u, Unify(member.ft_id, target))
    mods = ws.modifies()
    assert len(mods) == 1
    assert mods[0].new_tuple.values[1] == c("NYC")
    run_single_update(engine, u)
    assert u.state is UpdateState.FINISHED
    assert_no_violations(engine, store)
    # the collapsed tuple never appears; the suggestion row now points at NYC
    cities = {p.values[0] for p in live_payloads(store, "C")}
    assert cities == {c("NYC"), c("Ithaca")}


def test_expand_frontier_tuple_inserts_it():
    engine, store, _ = make_engine(data=travel_data())
    u, result, _ = airport_chain(engine, store)
    (member, _), = result.requests[0].members
    engine.apply_frontier_op(u, Expand(member.ft_id))
    run_single_update(
        engine,
        u,
        decide=lambda upd: Unify(
            upd.live_requests()[0].members[0][0].ft_id,
            upd.live_requests()[0].members[0][1][0][0],
        ),
    )
    assert u.state is UpdateState.FINISHED


# -- backward chase --


def test_delete_review_offers_both_deletion_candidates():
    engine, store, _ = make_engine(data=travel_data())
    victim = [tid for tid, t in store.live_tuples() if t.relation == "R"][0]
    u = engine.begin_update(Origin.delete(victim), 1)
    result = engine.run_step(u)
    assert result.outcome is StepOutcome.BLOCKED
    req = result.requests[0]
    assert req.kind == "negative"
    got = {p for _tid, p in req.candidates}
    assert got == {tup("A", "Geneva", "Geneva Winery"), tup("T", "Geneva Winery", "XYZ Tours")}
    # choose to delete the tour row; the update then terminates cleanly
    tour = [tid for tid, p in req.candidates if p.relation == "T"][0]
    engine.apply_frontier_op(u, DeleteSubset(req.request_id, frozenset([tour])))
    run_single_update(engine, u)
    assert u.state is UpdateState.FINISHED
    assert_no_violations(engine, store)
    assert u.polarity == "negative"


def test_single_candidate_backward_repair_is_deterministic():
    tgds = [Tgd(id="g", lhs=(atom("P", "?x"),), rhs=(atom("Q", "?x"),))]
    from updex.model import RelationSchema, Schema

    schema = Schema([RelationSchema("P", ("a",)), RelationSchema("Q", ("a",))])
    engine, store, _ = make_engine(schema, tgds, data=[tup("P", "a"), tup("Q", "a")])
    victim = [tid for tid, t in store.live_tuples() if t.relation == "Q"][0]
    u = engine.begin_update(Origin.delete(victim), 1)
    run_single_update(engine, u)
    assert u.state is UpdateState.FINISHED
    assert live_payloads(store) == []
    assert_no_violations(engine, store)


def test_delete_subset_that_misses_matches_represents_remaining():
    # three disjoint witnesses: deleting one still leaves two candidates,
    # which are presented again rather than guessed at
    tgds = [
        Tgd(
            id="g",
            lhs=(atom("P", "?x", "?y"),),
            rhs=(atom("Q", "?x"),),
        )
    ]
    from updex.model import RelationSchema, Schema

    schema = Schema([RelationSchema("P", ("a", "b")), RelationSchema("Q", ("a",))])
    engine, store, _ = make_engine(
        schema,
        tgds,
        data=[tup("P", "a", "u"), tup("P", "a", "w"), tup("P", "a", "v"), tup("Q", "a")],
    )
    victim = [tid for tid, t in store.live_tuples() if t.relation == "Q"][0]
    u = engine.begin_update(Origin.delete(victim), 1)
    result = engine.run_step(u)
    req = result.requests[0]
    assert len(req.candidates) == 3
    first = req.candidates[0][0]
    engine.apply_frontier_op(u, DeleteSubset(req.request_id, frozenset([first])))
    result = engine.run_step(u)
    assert result.outcome is StepOutcome.BLOCKED
    remaining = result.requests[0].candidates
    assert len(remaining) == 2
    # the same request identity is kept across re-presentations
    assert result.requests[0].request_id == req.request_id
    engine.apply_frontier_op(
        u,
        DeleteSubset(
            result.requests[0].request_id, frozenset(t for t, _ in remaining)
        ),
    )
    run_single_update(engine, u)
    assert u.state is UpdateState.FINISHED
    assert_no_violations(engine, store)


def test_single_remaining_candidate_after_subset_is_repaired_deterministically():
    tgds = [Tgd(id="g", lhs=(atom("P", "?x", "?y"),), rhs=(atom("Q", "?x"),))]
    from updex.model import RelationSchema, Schema

    schema = Schema([RelationSchema("P", ("a", "b")), RelationSchema("Q", ("a",))])
    engine, store, _ = make_engine(
        schema, tgds, data=[tup("P", "a", "u"), tup("P", "a", "w"), tup("Q", "a")]
    )
    victim = [tid for tid, t in store.live_tuples() if t.relation == "Q"][0]
    u = engine.begin_update(Origin.delete(victim), 1)
    result = engine.run_step(u)
    req = result.requests[0]
    engine.apply_frontier_op(u, DeleteSubset(req.request_id, frozenset([req.candidates[0][0]])))
    run_single_update(engine, u)
    assert u.state is UpdateState.FINISHED
    assert live_payloads(store, "P") == []
    assert_no_violations(engine, store)


# -- frontier operation contracts --


def test_frontier_op_rejections():
    engine, store, _ = make_engine(data=travel_data())
    u, result, _ = airport_chain(engine, store)
    req = result.requests[0]
    (member, candidates), = req.members
    ithaca = [tid for tid, p in store.live_tuples() if p == tup("C", "Ithaca")][0]
    suggestion = [
        tid for tid, p in store.live_tuples() if p.relation == "S" and p.values[2] == c("NYC")
    ][0]
    with pytest.raises(FrontierError) as err:
        engine.apply_frontier_op(u, Unify(member.ft_id, suggestion))
    assert err.value.reason == "not_more_specific"
    with pytest.raises(FrontierError):
        engine.apply_frontier_op(u, Expand(99999))
    with pytest.raises(FrontierError) as err:
        engine.apply_frontier_op(u, DeleteSubset(req.request_id, frozenset()))
    assert err.value.reason in ("stale_request", "empty_subset")
    # a positive update may still unify with a merely isomorphic counterpart,
    # but never while the request is consumed: finish it properly
    target = [tid for tid, p in candidates if p == tup("C", "NYC")][0]
    engine.apply_frontier_op(u, Unify(member.ft_id, target))
    with pytest.raises(FrontierError) as err:
        engine.apply_frontier_op(u, Unify(member.ft_id, target))
    assert err.value.reason == "stale_request"


# -- sibling groups --


def sibling_engine():
    from updex.model import RelationSchema, Schema

    schema = Schema(
        [
            RelationSchema("P", ("a",)),
            RelationSchema("Q", ("a", "b")),
            RelationSchema("W", ("b",)),
        ]
    )
    tgds = [
        Tgd(
            id="g",
            lhs=(atom("P", "?x"),),
            rhs=(atom("Q", "?x", "?z"), atom("W", "?z")),
        )
    ]
    return make_engine(schema, tgds, data=[tup("Q", "a", "b")])


def test_sibling_group_shares_fresh_nulls_and_unify_propagates():
    engine, store, _ = sibling_engine()
    u = engine.begin_update(Origin.insert(tup("P", "a")), 1)
    result = engine.run_step(u)
    assert result.outcome is StepOutcome.BLOCKED
    req = result.requests[0]
    members = req.members
    assert len(members) == 2
    q_member = [m for m, _ in members if m.tuple.relation == "Q"][0]
    w_member = [m for m, _ in members if m.tuple.relation == "W"][0]
    shared = q_member.tuple.values[1]
    assert isinstance(shared, LabeledNull)
    assert w_member.tuple.values[0] == shared
    # unify Q(a, z) with Q(a, b): the sibling W(z) must become W(b)
    q_candidates = [cands for m, cands in members if m.tuple.relation == "Q"][0]
    target = q_candidates[0][0]
    engine.apply_frontier_op(u, Unify(q_member.ft_id, target))
    run_single_update(engine, u)
    assert u.state is UpdateState.FINISHED
    assert tup("W", "b") in live_payloads(store, "W")
    assert_no_violations(engine, store)


def test_sibling_expand_keeps_originally_generated_null_ids():
    engine, store, _ = sibling_engine()
    u = engine.begin_update(Origin.insert(tup("P", "a")), 1)
    result = engine.run_step(u)
    req = result.requests[0]
    q_member = [m for m, _ in req.members if m.tuple.relation == "Q"][0]
    original_null = q_member.tuple.values[1]
    engine.apply_frontier_op(u, Expand(q_member.ft_id))
    run_single_update(engine, u)
    assert u.state is UpdateState.FINISHED
    q_rows = [p for p in live_payloads(store, "Q") if p.values[0] == c("a") and p != tup("Q", "a", "b")]
    assert q_rows[0].values[1] == original_null
    assert TupleData("W", (original_null,)) in live_payloads(store, "W")
    assert_no_violations(engine, store)


# -- side-effect repair --


def test_overlapping_violations_second_dequeued_without_writes():
    from updex.model import RelationSchema, Schema

    schema = Schema(
        [
            RelationSchema("P", ("a",)),
            RelationSchema("P2", ("a",)),
            RelationSchema("Q", ("a",)),
        ]
    )
    tgds = [
        Tgd(id="g1", lhs=(atom("P", "?x"),), rhs=(atom("Q", "?x"),)),
        Tgd(id="g2", lhs=(atom("P", "?x"), atom("P2", "?x")), rhs=(atom("Q", "?x"),)),
    ]
    engine, store, _ = make_engine(schema, tgds, data=[tup("P2", "a")])
    u = engine.begin_update(Origin.insert(tup("P", "a")), 1)
    r1 = engine.run_step(u)
    assert r1.outcome is StepOutcome.CONTINUE
    # both mappings fired; the first was dequeued for repair, one remains
    assert len(u.violations) == 1
    r2 = engine.run_step(u)  # applies Insert Q(a), which repairs both
    assert r2.outcome is StepOutcome.FINISHED
    assert u.violations == []
    # the second violation was dequeued without any further writes
    assert len([p for p in live_payloads(store, "Q")]) == 1
    assert_no_violations(engine, store)


# -- lemma: the cyclic pair stops after finitely many inserts --


def test_cyclic_mappings_block_after_exactly_two_deterministic_inserts():
    engine, store, _ = make_engine(data=travel_data())
    u, result, inserts = airport_chain(engine, store)
    assert result.outcome is StepOutcome.BLOCKED
    assert len(inserts) == 3  # origin plus exactly two chase inserts
    assert u.steps == 3  # the third step applies the last insert and blocks


# -- randomized: a terminated single-update run leaves no violations --


def seeded_random_engine(seed: int):
    rng = random.Random(seed)
    from .conftest import random_instance

    schema, tgds, db = random_instance(rng, max_tuples=0)
    engine, store, nulls = make_engine(schema, tgds, data=[])
    nulls.reserve_above(5000)
    return rng, engine, store, nulls


def random_decider(rng):
    def decide(u):
        req = u.live_requests()[0]
        if req.kind == "positive":
            member, candidates = req.members[0]
            options = [Expand(member.ft_id)] + [
                Unify(member.ft_id, tid) for tid, _ in candidates
            ]
            return rng.choice(options)
        ids = [tid for tid, _ in req.candidates]
        subset = frozenset(rng.sample(ids, rng.randint(1, len(ids))))
        return DeleteSubset(req.request_id, subset)

    return decide


def test_every_terminated_single_update_run_leaves_zero_violations():
    done = 0
    for seed in range(25):
        rng, engine, store, nulls = seeded_random_engine(seed)
        decide = random_decider(rng)
        consts = [f"k{i}" for i in range(6)]
        number = 0
        for _ in range(12):
            number += 1
            rel = rng.choice(list(engine.schema.relations.values()))
            payload = TupleData(
                rel.name, tuple(c(rng.choice(consts)) for _ in range(rel.arity))
            )
            live = store.live_tuples()
            if live and rng.random() < 0.25:
                victim = rng.choice(live)[0]
                origin = Origin.delete(victim)
            else:
                origin = Origin.insert(payload)
            u = engine.begin_update(origin, number, validate=False)
            run_single_update(engine, u, decide=decide, max_steps=4000)
            assert u.state is UpdateState.FINISHED
            assert_no_violations(engine, store)
            done += 1
    assert done == 25 * 12
