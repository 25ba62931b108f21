from __future__ import annotations

import itertools
import random

import pytest

from updex.model import (
    Constant,
    LabeledNull,
    NullFactory,
    SchemaError,
    TupleData,
    canonical_tuple_set,
    more_specific_than,
    strictly_more_specific,
)

from .conftest import c, n, tup


def test_constant_nyc_more_specific_than_null():
    # a known city is more specific than an unknown one
    assert more_specific_than(tup("C", "NYC"), TupleData("C", (n(4),)))


def test_identity_mapping_is_more_specific():
    assert more_specific_than(tup("C", "NYC"), tup("C", "NYC"))


def test_repeated_null_needs_single_valued_mapping():
    t = tup("R", "a", "b")
    t_prime = TupleData("R", (n(1), n(1)))
    assert not more_specific_than(t, t_prime)


def test_mapping_must_fix_constants():
    t = TupleData("R", (n(1), c("b")))
    t_prime = TupleData("R", (c("a"), n(2)))
    assert not more_specific_than(t, t_prime)


def test_arity_mismatch_is_schema_error():
    with pytest.raises(SchemaError):
        more_specific_than(tup("R", "a"), tup("R", "a", "b"))
    with pytest.raises(SchemaError):
        more_specific_than(tup("R", "a"), tup("Q", "b"))


def enumerate_small_tuples():
    """Every R-tuple of arity 2 over constants {a,b} and nulls {1,2}."""
    values = [c("a"), c("b"), n(1), n(2)]
    return [TupleData("R", (x, y)) for x, y in itertools.product(values, values)]


def test_specificity_reflexive_transitive_antisymmetric_up_to_renaming():
    tuples = enumerate_small_tuples()
    for t in tuples:
        assert more_specific_than(t, t)
    for a, b, d in itertools.product(tuples, tuples, tuples):
        if more_specific_than(a, b) and more_specific_than(b, d):
            assert more_specific_than(a, d)
    # mutual specificity implies equality up to a bijective null renaming
    for a, b in itertools.product(tuples, tuples):
        if more_specific_than(a, b) and more_specific_than(b, a):
            assert not strictly_more_specific(a, b)
            assert canonical_tuple_set([a]) == canonical_tuple_set([b])


def test_strictly_more_specific_excludes_isomorphic():
    iso_a = TupleData("R", (n(1), n(2)))
    iso_b = TupleData("R", (n(3), n(4)))
    assert more_specific_than(iso_a, iso_b)
    assert not strictly_more_specific(iso_a, iso_b)
    assert strictly_more_specific(tup("R", "a", "b"), iso_b)


def test_null_factory_never_reuses_ids():
    f = NullFactory()
    seen = {f.fresh().id for _ in range(100)}
    assert len(seen) == 100
    f.reserve_above(500)
    assert f.fresh().id == 501


def test_canonical_tuple_set_is_renaming_invariant():
    a = [TupleData("R", (n(7), c("x"))), TupleData("Q", (n(7), n(9)))]
    b = [TupleData("R", (n(1), c("x"))), TupleData("Q", (n(1), n(2)))]
    assert canonical_tuple_set(a) == canonical_tuple_set(b)
    # breaking the shared-null structure changes the form
    d = [TupleData("R", (n(1), c("x"))), TupleData("Q", (n(3), n(2)))]
    assert canonical_tuple_set(a) != canonical_tuple_set(d)


def test_labeled_null_equality_is_structural():
    assert LabeledNull(3) == LabeledNull(3)
    assert LabeledNull(3) != LabeledNull(4)
    assert Constant("3") != LabeledNull(3)
