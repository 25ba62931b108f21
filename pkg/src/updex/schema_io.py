"""Schema, mapping, and scenario documents.

One JSON-shaped document carries the relations and the mappings; scenario
files add a tuple-dump section. Mapping terms are strings: variables carry
a `?` prefix, constants are unprefixed, and a constant that itself starts
with `?` is escaped by doubling it. Parse/serialize round-trips losslessly.
"""
from __future__ import annotations

import json
from typing import Any, Optional

from .model import (
    Atom,
    Constant,
    LabeledNull,
    RelationSchema,
    Schema,
    SchemaError,
    Tgd,
    TupleData,
    Value,
    Var,
)


def term_to_str(term) -> str:
    if isinstance(term, Var):
        return f"?{term.name}"
    text = term.text
    if text.startswith("?"):
        return "?" + text  # doubled leading marker escapes a literal ?
    return text


def str_to_term(s: str):
    if s.startswith("??"):
        return Constant(s[1:])
    if s.startswith("?"):
        name = s[1:]
        if not name:
            raise SchemaError("empty variable name")
        return Var(name)
    return Constant(s)


def value_to_json(v: Value) -> Any:
    if isinstance(v, LabeledNull):
        return {"null": v.id}
    return v.text


def value_from_json(x: Any) -> Value:
    if isinstance(x, dict):
        return LabeledNull(int(x["null"]))
    if isinstance(x, str):
        return Constant(x)
    raise SchemaError(f"bad value encoding {x!r}")


def schema_to_dict(schema: Schema) -> list[dict]:
    return [
        {"name": r.name, "attributes": list(r.attributes)}
        for r in schema.relations.values()
    ]


def tgds_to_dict(tgds) -> list[dict]:
    def atoms(side):
        return [
            {"rel": a.relation, "terms": [term_to_str(t) for t in a.terms]}
            for a in side
        ]

    return [
        {"id": t.id, "lhs": atoms(t.lhs), "rhs": atoms(t.rhs)} for t in tgds
    ]


def document_to_dict(schema: Schema, tgds, tuples: Optional[list[TupleData]] = None) -> dict:
    doc = {"relations": schema_to_dict(schema), "mappings": tgds_to_dict(tgds)}
    if tuples is not None:
        doc["tuples"] = [
            {"rel": t.relation, "values": [value_to_json(v) for v in t.values]}
            for t in tuples
        ]
    return doc


def parse_document(doc: dict) -> tuple[Schema, list[Tgd], list[TupleData]]:
    try:
        schema = Schema(
            RelationSchema(r["name"], tuple(r["attributes"]))
            for r in doc["relations"]
        )
    except KeyError as e:
        raise SchemaError(f"missing key in relations section: {e}") from None

    def parse_atoms(raw) -> tuple[Atom, ...]:
        return tuple(
            Atom(a["rel"], tuple(str_to_term(s) for s in a["terms"])) for a in raw
        )

    tgds = []
    for m in doc.get("mappings", []):
        tgd = Tgd(id=str(m["id"]), lhs=parse_atoms(m["lhs"]), rhs=parse_atoms(m["rhs"]))
        tgd.validate(schema)
        tgds.append(tgd)

    tuples = []
    for t in doc.get("tuples", []):
        td = TupleData(t["rel"], tuple(value_from_json(v) for v in t["values"]))
        if td.relation not in schema:
            raise SchemaError(f"tuple for unknown relation {td.relation!r}")
        if len(td.values) != schema.arity(td.relation):
            raise SchemaError(f"arity mismatch in tuple dump for {td.relation!r}")
        tuples.append(td)
    return schema, tgds, tuples


def load_document(path) -> tuple[Schema, list[Tgd], list[TupleData]]:
    with open(path) as f:
        return parse_document(json.load(f))


def save_document(path, schema: Schema, tgds, tuples=None) -> None:
    with open(path, "w") as f:
        json.dump(document_to_dict(schema, tgds, tuples), f, indent=2)
        f.write("\n")
