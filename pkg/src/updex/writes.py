"""Write operations produced by chase steps and frontier operations."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .model import LabeledNull, TupleData, Value


@dataclass(frozen=True, slots=True)
class Insert:
    tuple: TupleData


@dataclass(frozen=True, slots=True)
class Delete:
    tuple_id: int


@dataclass(frozen=True, slots=True)
class Modify:
    """Rewrite of one tuple caused by a null-replacement binding."""

    tuple_id: int
    new_tuple: TupleData
    cause: tuple[tuple[LabeledNull, Value], ...]


Write = Union[Insert, Delete, Modify]


@dataclass
class WriteSet:
    """Ordered writes belonging to one chase step of one update."""

    writes: list[Write] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.writes)

    def __len__(self) -> int:
        return len(self.writes)

    def __iter__(self):
        return iter(self.writes)

    def add(self, w: Write) -> None:
        self.writes.append(w)

    def extend(self, ws: "WriteSet") -> None:
        self.writes.extend(ws.writes)

    def inserts(self) -> list[Insert]:
        return [w for w in self.writes if isinstance(w, Insert)]

    def deletes(self) -> list[Delete]:
        return [w for w in self.writes if isinstance(w, Delete)]

    def modifies(self) -> list[Modify]:
        return [w for w in self.writes if isinstance(w, Modify)]


@dataclass(frozen=True, slots=True)
class AppliedWrite:
    """A write as actually applied to the version store.

    old_tuple is the payload replaced or deleted (None for inserts);
    new_tuple the payload now live (None for deletes). applied is False for
    no-ops such as deleting an already-dead tuple or re-inserting a live
    duplicate; those are recorded but have no effect.
    """

    kind: str  # "insert" | "delete" | "modify"
    tuple_id: int
    relation: str
    old_tuple: Optional[TupleData]
    new_tuple: Optional[TupleData]
    updater: int
    lsn: int
    applied: bool = True
