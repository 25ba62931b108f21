from __future__ import annotations

import random

import pytest

from updex.matching import (
    InMemoryDatabase,
    apply_unifier,
    find_more_specific,
    match_conjunction,
    match_lhs,
    normalize_bindings,
    null_occurrences,
    unification_bindings,
)
from updex.model import Constant, ContractError, LabeledNull, TupleData
from updex.writes import Modify

from .conftest import atom, c, n, random_instance, travel_data, travel_tgds, tup
from .oracles import bf_lhs_matches, bf_match_conjunction


def fingerprint_matches(matches):
    out = set()
    for assignment, witness in matches:
        out.add((tuple(sorted(assignment.items(), key=repr)), witness))
    return out


def test_match_lhs_tour_mapping_witness():
    db = InMemoryDatabase(travel_data())
    s3 = [g for g in travel_tgds() if g.id == "s3"][0]
    matches = match_lhs(db, s3)
    assert len(matches) == 1
    assignment, witness = matches[0]
    assert assignment["attr"] == c("Geneva Winery")
    assert assignment["co"] == c("XYZ Tours")
    assert len(witness) == 2


def test_match_lhs_empty_database():
    db = InMemoryDatabase()
    for tgd in travel_tgds():
        assert match_lhs(db, tgd) == []


def test_match_lhs_binds_nulls_like_values():
    # a database null participates in joins by identity
    db = InMemoryDatabase(
        [
            TupleData("A", (c("Geneva"), n(3))),
            TupleData("T", (n(3), c("XYZ Tours"))),
            TupleData("T", (n(4), c("XYZ Tours"))),
        ]
    )
    s3 = [g for g in travel_tgds() if g.id == "s3"][0]
    matches = match_lhs(db, s3)
    assert len(matches) == 1
    assert matches[0][0]["attr"] == n(3)


def test_match_conjunction_matches_brute_force_on_random_instances(rng):
    for trial in range(120):
        _schema, tgds, db = random_instance(rng)
        for tgd in tgds:
            got = fingerprint_matches(match_lhs(db, tgd))
            want = fingerprint_matches(bf_lhs_matches(db, tgd))
            assert got == want, f"trial {trial} tgd {tgd}"


def test_match_conjunction_limit_short_circuits():
    db = InMemoryDatabase([tup("C", f"city{i}") for i in range(10)])
    res = match_conjunction(db, (atom("C", "?x"),), limit=1)
    assert len(res) == 1


def test_apply_unifier_collapses_null_globally():
    # unifying the unknown city with NYC rewrites the airport suggestion row
    db = InMemoryDatabase(
        [
            TupleData("S", (n(3), n(4), c("NYC"))),
            tup("C", "NYC"),
        ]
    )
    ws = apply_unifier(db, {n(4): c("NYC")})
    assert len(ws) == 1
    mod = ws.modifies()[0]
    assert mod.new_tuple == TupleData("S", (n(3), c("NYC"), c("NYC")))


def test_apply_unifier_empty_bindings():
    db = InMemoryDatabase(travel_data())
    assert len(apply_unifier(db, {})) == 0


def test_apply_unifier_touches_every_occurrence():
    shared = n(9)
    db = InMemoryDatabase(
        [
            TupleData("C", (shared,)),
            TupleData("A", (shared, c("zoo"))),
            TupleData("T", (c("zoo"), shared)),
            tup("C", "NYC"),
        ]
    )
    occurrences = null_occurrences(db, shared)
    assert len(occurrences) == 3
    ws = apply_unifier(db, {shared: c("Rome")})
    assert len(ws) == 3


def test_apply_unifier_is_idempotent():
    db = InMemoryDatabase(
        [TupleData("S", (n(3), n(4), c("NYC"))), tup("C", "NYC")]
    )
    ws = apply_unifier(db, {n(4): c("NYC")})
    for m in ws.modifies():
        db.replace(m.tuple_id, m.new_tuple)
    assert len(apply_unifier(db, {n(4): c("NYC")})) == 0


def test_apply_unifier_rejects_constant_binding():
    db = InMemoryDatabase(travel_data())
    with pytest.raises(ContractError):
        apply_unifier(db, {c("NYC"): c("Rome")})


def test_apply_unifier_rejects_non_idempotent_bindings():
    db = InMemoryDatabase()
    with pytest.raises(ContractError):
        apply_unifier(db, {n(1): n(2), n(2): c("x")})


def test_normalize_bindings_resolves_chains_and_cycles():
    got = normalize_bindings([(n(1), n(2)), (n(2), c("x"))])
    assert got == {n(1): c("x"), n(2): c("x")}
    got = normalize_bindings([(n(1), n(2)), (n(2), n(1))])
    assert got == {n(2): n(1)}
    with pytest.raises(ContractError):
        normalize_bindings([(c("a"), c("b"))])


def test_unification_bindings_from_frontier_pair():
    frontier = TupleData("C", (n(4),))
    target = tup("C", "NYC")
    assert unification_bindings(frontier, target) == {n(4): c("NYC")}
    with pytest.raises(ContractError):
        unification_bindings(target, frontier)


def test_find_more_specific_strict_vs_nonstrict():
    db = InMemoryDatabase([tup("C", "NYC"), TupleData("C", (n(8),))])
    probe = TupleData("C", (n(4),))
    strict = find_more_specific(db, probe, strict=True)
    assert [p for _, p in strict] == [tup("C", "NYC")]
    loose = find_more_specific(db, probe, strict=False)
    assert len(loose) == 2
