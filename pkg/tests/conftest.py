from __future__ import annotations

import random

import pytest

from updex.model import (
    Atom,
    Constant,
    LabeledNull,
    RelationSchema,
    Schema,
    Tgd,
    TupleData,
    Var,
)


def c(text: str) -> Constant:
    return Constant(text)


def n(i: int) -> LabeledNull:
    return LabeledNull(i)


def v(name: str) -> Var:
    return Var(name)


def tup(rel: str, *values) -> TupleData:
    vals = tuple(c(x) if isinstance(x, str) else x for x in values)
    return TupleData(rel, vals)


def atom(rel: str, *terms) -> Atom:
    parsed = []
    for t in terms:
        if isinstance(t, str) and t.startswith("?"):
            parsed.append(v(t[1:]))
        elif isinstance(t, str):
            parsed.append(c(t))
        else:
            parsed.append(t)
    return Atom(rel, tuple(parsed))


def travel_schema() -> Schema:
    """City/airport/tour repository: C(city), S(airport, located, served),
    A(city, attraction), T(attraction, company), R(attraction, company, review)."""
    return Schema(
        [
            RelationSchema("C", ("city",)),
            RelationSchema("S", ("airport", "located_city", "served_city")),
            RelationSchema("A", ("city", "attraction")),
            RelationSchema("T", ("attraction", "company")),
            RelationSchema("R", ("attraction", "company", "review")),
        ]
    )


def travel_tgds() -> list[Tgd]:
    s1 = Tgd(
        id="s1",
        lhs=(atom("C", "?city"),),
        rhs=(atom("S", "?ap", "?loc", "?city"),),
    )
    s2 = Tgd(
        id="s2",
        lhs=(atom("S", "?ap", "?loc", "?srv"),),
        rhs=(atom("C", "?loc"), atom("C", "?srv")),
    )
    s3 = Tgd(
        id="s3",
        lhs=(atom("A", "?city", "?attr"), atom("T", "?attr", "?co")),
        rhs=(atom("R", "?attr", "?co", "?rev"),),
    )
    return [s1, s2, s3]


def travel_data() -> list[TupleData]:
    return [
        tup("C", "Ithaca"),
        tup("S", "Tompkins Regional", "Ithaca", "Ithaca"),
        tup("A", "Niagara", "Niagara Falls"),
        tup("A", "Geneva", "Geneva Winery"),
        tup("T", "Geneva Winery", "XYZ Tours"),
        tup("R", "Geneva Winery", "XYZ Tours", "Great!"),
    ]


def daytrip_schema() -> Schema:
    """Variant with a three-column tour relation and conference day trips:
    V(city, conference), E(conference, attraction)."""
    return Schema(
        [
            RelationSchema("A", ("city", "attraction")),
            RelationSchema("T", ("attraction", "company", "city")),
            RelationSchema("R", ("attraction", "company", "review")),
            RelationSchema("V", ("city", "conference")),
            RelationSchema("E", ("conference", "attraction")),
        ]
    )


def daytrip_tgds() -> list[Tgd]:
    s3 = Tgd(
        id="s3",
        lhs=(atom("A", "?city", "?attr"), atom("T", "?attr", "?co", "?tc")),
        rhs=(atom("R", "?attr", "?co", "?rev"),),
    )
    s4 = Tgd(
        id="s4",
        lhs=(atom("V", "?city", "?conf"), atom("T", "?attr", "?co", "?city")),
        rhs=(atom("E", "?conf", "?attr"),),
    )
    return [s3, s4]


def daytrip_data() -> list[TupleData]:
    return [
        tup("A", "Geneva", "Geneva Winery"),
        tup("T", "Geneva Winery", "XYZ", "Syracuse"),
        tup("R", "Geneva Winery", "XYZ", "Great!"),
    ]


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20240811)


# -- random instances for oracle cross-checks --


def random_instance(rng: random.Random, max_tuples: int = 40, allow_nulls: bool = True):
    """A random small schema, tgd set, and database for property tests."""
    from updex.matching import InMemoryDatabase

    n_rel = rng.randint(2, 4)
    rels = []
    for i in range(n_rel):
        arity = rng.randint(1, 3)
        rels.append(RelationSchema(f"R{i}", tuple(f"a{j}" for j in range(arity))))
    schema = Schema(rels)

    consts = [f"k{i}" for i in range(rng.randint(3, 6))]
    null_pool = [LabeledNull(1000 + i) for i in range(6)] if allow_nulls else []

    def random_value():
        if null_pool and rng.random() < 0.25:
            return rng.choice(null_pool)
        return Constant(rng.choice(consts))

    db = InMemoryDatabase()
    seen = set()
    count = 0 if max_tuples == 0 else rng.randint(3, max(3, max_tuples))
    for _ in range(count):
        rel = rng.choice(rels)
        t = TupleData(rel.name, tuple(random_value() for _ in range(rel.arity)))
        if (t.relation, t.values) not in seen:
            seen.add((t.relation, t.values))
            db.insert(t)

    def random_atom(rel: RelationSchema, var_pool: list[str]):
        terms = []
        for _ in range(rel.arity):
            r = rng.random()
            if r < 0.6 and var_pool:
                terms.append(Var(rng.choice(var_pool)))
            elif r < 0.8:
                terms.append(Constant(rng.choice(consts)))
            else:
                name = f"x{rng.randint(0, 5)}"
                var_pool.append(name)
                terms.append(Var(name))
        return Atom(rel.name, tuple(terms))

    tgds = []
    for i in range(rng.randint(1, 3)):
        var_pool = [f"x{j}" for j in range(rng.randint(1, 3))]
        lhs = tuple(
            random_atom(rng.choice(rels), var_pool) for _ in range(rng.randint(1, 2))
        )
        rhs = tuple(
            random_atom(rng.choice(rels), var_pool) for _ in range(rng.randint(1, 2))
        )
        try:
            tgds.append(Tgd(id=f"g{i}", lhs=lhs, rhs=rhs))
        except Exception:
            continue
    return schema, tgds, db
