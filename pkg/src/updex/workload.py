"""Synthetic scenarios, simulated frontier decisions, and abort experiments.

Scenario generation follows the shape of the evaluation setup: relations
with small random arities, mappings over one to three atoms per side
(smaller counts more likely) with inter-atom joins and constants drawn
from a fixed pool, and an initial database produced by pushing random
inserts through the engine itself until every constraint holds. Workloads
are streams of random inserts (optionally mixed with deletes) run under
the round-robin optimistic scheduler; metrics count total aborts and
purely cascading abort requests.
"""
from __future__ import annotations

import csv
import hashlib
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .chase import (
    ChaseEngine,
    Decider,
    DeleteSubset,
    Expand,
    Origin,
    Unify,
    UpdateRecord,
    run_single_update,
)
from .model import (
    Atom,
    Constant,
    EngineError,
    NullFactory,
    RelationSchema,
    Schema,
    Tgd,
    TupleData,
    Var,
)
from .mvcc import VersionStore
from .schedlog import ScheduleLog
from .scheduler import Metrics, Scheduler, SchedulerConfig

ATOM_COUNT_WEIGHTS = ((1, 0.5), (2, 0.3), (3, 0.2))


def derive_seed(*parts) -> int:
    """Stable sub-stream seed; plain hash() is process-randomized for
    strings, which would break run-to-run reproducibility."""
    text = ":".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


@dataclass
class GeneratorConfig:
    relation_count: int = 20
    arity_min: int = 1
    arity_max: int = 6
    mapping_count: int = 20
    constant_pool_size: int = 50
    initial_tuples: int = 500
    workload_size: int = 100
    delete_fraction: float = 0.2
    fresh_value_probability: float = 0.5
    seed: int = 0
    seeding_step_budget: int = 400_000

    def __post_init__(self):
        if self.relation_count <= 0 or self.mapping_count < 0:
            raise ValueError("relation and mapping counts must be positive")
        if not (0.0 <= self.delete_fraction <= 1.0):
            raise ValueError("delete fraction must lie in [0, 1]")
        if self.arity_min < 1 or self.arity_max < self.arity_min:
            raise ValueError("bad arity range")


@dataclass
class Scenario:
    schema: Schema
    tgds: list[Tgd]  # the full monotone list; use a prefix for lower density
    store: VersionStore
    nulls: NullFactory
    next_number: int
    constants: list[str]
    config: GeneratorConfig

    def tgd_prefix(self, count: int) -> list[Tgd]:
        if count > len(self.tgds):
            raise ValueError(f"scenario only has {len(self.tgds)} mappings")
        return self.tgds[:count]


def _weighted_choice(rng: random.Random, weights) -> int:
    roll = rng.random()
    acc = 0.0
    for value, w in weights:
        acc += w
        if roll < acc:
            return value
    return weights[-1][0]


def _random_mapping(
    rng: random.Random, mid: str, relations: list[RelationSchema], constants: list[str]
) -> Optional[Tgd]:
    lhs_rels = rng.sample(relations, min(len(relations), _weighted_choice(rng, ATOM_COUNT_WEIGHTS)))
    rhs_rels = rng.sample(relations, min(len(relations), _weighted_choice(rng, ATOM_COUNT_WEIGHTS)))

    var_counter = 0

    def fresh_var() -> str:
        nonlocal var_counter
        var_counter += 1
        return f"v{var_counter}"

    lhs_vars: list[str] = []

    def lhs_atom(rel: RelationSchema) -> Atom:
        terms = []
        for _ in range(rel.arity):
            roll = rng.random()
            if roll < 0.15:
                terms.append(Constant(rng.choice(constants)))
            elif roll < 0.55 and lhs_vars:
                terms.append(Var(rng.choice(lhs_vars)))
            else:
                name = fresh_var()
                lhs_vars.append(name)
                terms.append(Var(name))
        return Atom(rel.name, tuple(terms))

    lhs = tuple(lhs_atom(r) for r in lhs_rels)

    # require an inter-atom join when there is more than one lhs atom
    if len(lhs) > 1:
        shared = set(lhs[0].variables())
        joined = any(shared & a.variables() for a in lhs[1:])
        if not joined:
            return None

    exported: list[str] = []
    rhs_exist: list[str] = []

    def rhs_atom(rel: RelationSchema) -> Atom:
        terms = []
        for _ in range(rel.arity):
            roll = rng.random()
            if roll < 0.1:
                terms.append(Constant(rng.choice(constants)))
            elif roll < 0.6 and lhs_vars:
                name = rng.choice(lhs_vars)
                exported.append(name)
                terms.append(Var(name))
            elif rhs_exist and roll < 0.75:
                terms.append(Var(rng.choice(rhs_exist)))
            else:
                name = fresh_var()
                rhs_exist.append(name)
                terms.append(Var(name))
        return Atom(rel.name, tuple(terms))

    rhs = tuple(rhs_atom(r) for r in rhs_rels)
    if not exported:
        return None  # nothing propagates; not a useful mapping
    has_constant = any(
        isinstance(t, Constant) for a in lhs + rhs for t in a.terms
    )
    if not has_constant:
        return None
    try:
        return Tgd(id=mid, lhs=lhs, rhs=rhs)
    except Exception:
        return None


def simulated_frontier_oracle(rng: random.Random) -> Decider:
    """Answer a frontier request by choosing uniformly at random among all
    available alternatives: expansion or any unification target for a
    positive tuple, any nonempty candidate subset for a negative set.
    Unifications are eventually chosen on every cyclic path, so every chase
    terminates."""

    def decide(u: UpdateRecord):
        req = sorted(u.live_requests(), key=lambda r: r.request_id)[0]
        if req.kind == "positive":
            member, candidates = req.members[0]
            options = [Expand(member.ft_id)] + [
                Unify(member.ft_id, tid) for tid, _ in candidates
            ]
            return options[rng.randrange(len(options))]
        ids = sorted(tid for tid, _ in req.candidates)
        subsets = 2 ** len(ids) - 1
        pick = 1 + rng.randrange(subsets)
        chosen = frozenset(tid for i, tid in enumerate(ids) if pick & (1 << i))
        return DeleteSubset(req.request_id, chosen)

    return decide


def generate_scenario(cfg: GeneratorConfig) -> Scenario:
    """Schema, mappings, and an engine-seeded initial database that satisfies
    every mapping. The mapping list is monotone: lower-density settings use
    a prefix of the same list, and the seeded database satisfies them all."""
    rng = random.Random(derive_seed(cfg.seed, "scenario"))
    relations = [
        RelationSchema(
            f"R{i}",
            tuple(f"a{j}" for j in range(rng.randint(cfg.arity_min, cfg.arity_max))),
        )
        for i in range(cfg.relation_count)
    ]
    schema = Schema(relations)
    constants = [f"c{i}" for i in range(cfg.constant_pool_size)]

    tgds: list[Tgd] = []
    attempts = 0
    while len(tgds) < cfg.mapping_count:
        attempts += 1
        if attempts > cfg.mapping_count * 200:
            raise EngineError("mapping generation failed to converge")
        tgd = _random_mapping(rng, f"m{len(tgds)}", relations, constants)
        if tgd is not None:
            tgds.append(tgd)

    store = VersionStore(schema)
    nulls = NullFactory()
    engine = ChaseEngine(schema, tgds, store, nulls)
    oracle_rng = random.Random(derive_seed(cfg.seed, "seed-oracle"))
    decide = simulated_frontier_oracle(oracle_rng)
    number = 0
    for _ in range(cfg.initial_tuples):
        number += 1
        rel = relations[rng.randrange(len(relations))]
        payload = TupleData(
            rel.name,
            tuple(Constant(rng.choice(constants)) for _ in range(rel.arity)),
        )
        u = engine.begin_update(Origin.insert(payload), number, validate=False)
        run_single_update(engine, u, decide=decide, max_steps=cfg.seeding_step_budget)
    return Scenario(
        schema=schema,
        tgds=tgds,
        store=store,
        nulls=nulls,
        next_number=number + 1,
        constants=constants,
        config=cfg,
    )


def make_workload(
    scenario: Scenario, cfg: GeneratorConfig, kind: str
) -> list[Origin]:
    """Random update stream: receiving relations uniform; insert values fresh
    or pooled with equal probability; delete targets uniform over their
    relation's seeded contents; mixed workloads are shuffled."""
    if kind not in ("all-insert", "mixed"):
        raise ValueError(f"unknown workload kind {kind!r}")
    rng = random.Random(derive_seed(cfg.seed, "workload", kind))
    relations = list(scenario.schema.relations.values())
    live = scenario.store.live_tuples()
    by_relation: dict[str, list[tuple[int, TupleData]]] = {}
    for tid, payload in live:
        by_relation.setdefault(payload.relation, []).append((tid, payload))

    deletes = 0
    if kind == "mixed":
        deletes = round(cfg.workload_size * cfg.delete_fraction)
    inserts = cfg.workload_size - deletes

    fresh_counter = 0

    def fresh_value() -> str:
        nonlocal fresh_counter
        fresh_counter += 1
        return f"f{cfg.seed}_{fresh_counter}"

    origins: list[Origin] = []
    for _ in range(inserts):
        rel = relations[rng.randrange(len(relations))]
        values = []
        for _ in range(rel.arity):
            if rng.random() < cfg.fresh_value_probability:
                values.append(Constant(fresh_value()))
            else:
                values.append(Constant(rng.choice(scenario.constants)))
        origins.append(Origin.insert(TupleData(rel.name, tuple(values))))
    chosen_deletes: list[Origin] = []
    guard = 0
    while len(chosen_deletes) < deletes:
        guard += 1
        if guard > deletes * 1000 + 100:
            raise EngineError("could not draw delete targets; database too empty")
        rel = relations[rng.randrange(len(relations))]
        pool = by_relation.get(rel.name)
        if not pool:
            continue  # empty relation: redraw
        tid, payload = pool[rng.randrange(len(pool))]
        if any(o.tuple_id == tid for o in chosen_deletes):
            continue
        chosen_deletes.append(Origin(kind="delete", tuple_id=tid, tuple=payload))
    origins.extend(chosen_deletes)
    if kind == "mixed":
        rng.shuffle(origins)
    return origins


@dataclass
class RunMetrics:
    mapping_count: int
    algorithm: str
    workload: str
    seed: int
    total_aborts: int
    cascading_abort_requests: int
    direct_conflict_aborts: int
    updates_run: int
    steps: int
    wall_clock_s: float
    per_update_time_s: float
    log_hash: str

    @staticmethod
    def csv_columns() -> list[str]:
        return [
            "mapping_count",
            "algorithm",
            "workload",
            "seed",
            "total_aborts",
            "cascading_abort_requests",
            "direct_conflict_aborts",
            "updates_run",
            "steps",
            "wall_clock_s",
            "per_update_time_s",
            "log_hash",
        ]

    def csv_row(self) -> list:
        return [getattr(self, col) for col in self.csv_columns()]


@dataclass
class ExperimentResult:
    metrics: RunMetrics
    scheduler: Optional[Scheduler]

    @property
    def log(self) -> ScheduleLog:
        return self.scheduler.log


def run_experiment(
    scenario: Scenario,
    mapping_count: int,
    workload_kind: str,
    cascade: str,
    run_seed: Optional[int] = None,
    config: Optional[SchedulerConfig] = None,
    keep_scheduler: bool = True,
) -> ExperimentResult:
    """One full run: clone the seeded store, submit the whole workload, and
    drive it round-robin under the optimistic scheduler with the simulated
    oracle until every update terminates."""
    cfg = scenario.config
    seed = cfg.seed if run_seed is None else run_seed
    tgds = scenario.tgd_prefix(mapping_count)
    store = clone_store(scenario.store)
    nulls = NullFactory(start=scenario.nulls.next_id)
    sched_config = config or SchedulerConfig(cascade=cascade)
    if sched_config.cascade != cascade:
        raise ValueError("config cascade does not match requested algorithm")
    sched = Scheduler(
        scenario.schema,
        tgds,
        store=store,
        nulls=nulls,
        config=sched_config,
        start_number=scenario.next_number,
    )
    for origin in make_workload(scenario, cfg, workload_kind):
        sched.submit(origin, validate=False)
    oracle = simulated_frontier_oracle(random.Random(derive_seed(seed, "run-oracle")))
    metrics = sched.run_until_quiescent(oracle)
    run = RunMetrics(
        mapping_count=mapping_count,
        algorithm=cascade,
        workload=workload_kind,
        seed=seed,
        total_aborts=metrics.aborts,
        cascading_abort_requests=metrics.cascading_abort_requests,
        direct_conflict_aborts=metrics.direct_conflict_aborts,
        updates_run=metrics.updates_run,
        steps=metrics.steps,
        wall_clock_s=metrics.wall_clock_s,
        per_update_time_s=metrics.per_update_time_s,
        log_hash=sched.log.hash(),
    )
    return ExperimentResult(metrics=run, scheduler=sched if keep_scheduler else None)


def clone_store(store: VersionStore) -> VersionStore:
    """Deep copy of the version chains so experiment runs cannot disturb the
    shared seeded scenario."""
    out = VersionStore(store.schema)
    for tid, chain in store._chains.items():
        out._chains[tid] = list(chain)
        for v in chain:
            out._relation_ids.setdefault(v.payload.relation, set()).add(tid)
    out._next_tuple_id = store._next_tuple_id
    out._next_lsn = store._next_lsn
    out.history = list(store.history)
    return out


def write_metrics_csv(path, rows: Iterable[RunMetrics]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(RunMetrics.csv_columns())
        for row in rows:
            writer.writerow(row.csv_row())


def precise_coarse_slowdown(rows: Iterable[RunMetrics]) -> dict[tuple[int, str], float]:
    """Relative per-update time of the exact dependency algorithm over the
    footprint overestimate, per (mapping count, workload)."""
    times: dict[tuple[int, str, str], list[float]] = {}
    for r in rows:
        times.setdefault((r.mapping_count, r.workload, r.algorithm), []).append(
            r.per_update_time_s
        )
    out: dict[tuple[int, str], float] = {}
    keys = {(m, w) for (m, w, _a) in times}
    for m, w in sorted(keys):
        precise = times.get((m, w, "precise"))
        coarse = times.get((m, w, "coarse"))
        if precise and coarse and sum(coarse) > 0:
            out[(m, w)] = (sum(precise) / len(precise)) / (sum(coarse) / len(coarse))
    return out
