"""Interactive counterfactual sessions: propose, edit constraints, warm-start, repeat.

A session owns one instance under explanation, the active constraint set and
the current GA population. Constraint edits keep the population alive instead
of restarting the search: either only the members violating the new
constraints are repaired (fix-violators) or the whole population is resampled
around the instance (random-restart). ``run_sequence`` is the scripted driver
used by the benchmarks; its baseline mode throws the population away and
re-initializes from scratch at every step for comparison.

RNG discipline: every stochastic phase draws from a generator seeded by
``[params.seed, stream, index]`` so any step of any mode is reproducible in
isolation. Stream 1 is initialization (index = how many initializations have
happened), stream 2 is evolution (index = step number). Baseline step 0 and
an incremental session's first propose therefore share identical randomness,
which makes the two modes provably identical at step 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import (ConstraintSet, ConstraintUpdate, apply_updates,
                          is_feasible, repair, validate_constraint_set)
from .data import (Dataset, Instance, compute_weights, normalize_matrix)
from .engine import (Candidate, GAParams, Population, SearchResult, evolve,
                     init_knn, init_synthetic)
from .metrics import RunMetrics, proximity, sparsity
from .neighbors import build_kd_index

ACTIVE = "active"
ACCEPTED = "accepted"
EXHAUSTED = "exhausted"

FIX_VIOLATORS = "fix_violators"
RANDOM_RESTART = "random_restart"

KNN_INIT = "knn"
SYNTHETIC_INIT = "synthetic"

INCREMENTAL = "incremental"
BASELINE = "baseline"

_FAVORABLE = 1
_INIT_STREAM = 1
_EVOLVE_STREAM = 2


class SessionError(RuntimeError):
    """Misuse of the session protocol."""


class InvalidTransition(SessionError):
    """Operation not permitted in the session's current status."""


@dataclass(frozen=True)
class HistoryEntry:
    constraints: ConstraintSet
    best: Candidate | None
    result: SearchResult


class Session:
    """State machine for one instance under explanation.

    Callers must serialize operations on a single session; distinct sessions
    are independent.
    """

    def __init__(self, x: Instance, model, train: Dataset,
                 constraints: ConstraintSet | None = None,
                 params: GAParams | None = None,
                 init: str = KNN_INIT, strategy: str = FIX_VIOLATORS):
        if init not in (KNN_INIT, SYNTHETIC_INIT):
            raise ValueError(f"unknown init strategy {init!r}")
        if strategy not in (FIX_VIOLATORS, RANDOM_RESTART):
            raise ValueError(f"unknown warm-start strategy {strategy!r}")
        self.params = params if params is not None else GAParams()
        self.schema = train.schema
        self.schema.validate_instance(x)
        self.x = x
        self.model = model
        self.train = train
        self.init = init
        self.strategy = strategy

        x_class = int(model.predict(x))
        if x_class == _FAVORABLE:
            raise SessionError(
                "instance already receives the favorable outcome; nothing to explain")
        C = constraints if constraints is not None else ConstraintSet({})
        validate_constraint_set(C, self.schema)

        self.weights = compute_weights(train)
        # raises when no training instance is predicted favorable
        self.index = build_kd_index(train, model, _FAVORABLE)

        self.constraints = C
        self.history: list[HistoryEntry] = []
        self.status = ACTIVE
        self.final: Candidate | None = None
        self._init_count = 0
        self.population = self._fresh_population(C)

    # -- internals -------------------------------------------------------

    def _rng(self, stream: int, index: int) -> np.random.Generator:
        return np.random.default_rng([self.params.seed, stream, index])

    def _fresh_population(self, C: ConstraintSet) -> Population:
        rng = self._rng(_INIT_STREAM, self._init_count)
        self._init_count += 1
        if self.init == KNN_INIT:
            return init_knn(self.x, self.index, C, self.params, rng)
        return init_synthetic(self.x, self.schema, C, self.params, rng)

    def _require_active(self, op: str) -> None:
        if self.status != ACTIVE:
            raise InvalidTransition(f"{op} requires an active session, not {self.status}")

    # -- protocol ----------------------------------------------------------

    @property
    def iteration(self) -> int:
        return len(self.history)

    def propose(self) -> tuple[SearchResult, "Session"]:
        """Evolve the current population and record the outcome.

        A failed search (success=False) leaves the session active so the user
        can relax constraints and try again.
        """
        self._require_active("propose")
        rng = self._rng(_EVOLVE_STREAM, len(self.history))
        result, pop = evolve(self.x, self.population, self.model, self.weights,
                             self.constraints, self.schema, self.params, rng)
        self.population = pop
        self.history.append(HistoryEntry(self.constraints, result.best, result))
        return result, self

    def update_constraints(self, updates) -> "Session":
        """Apply one update or a batch atomically, then warm-start the population.

        Fix-violators touches only members that break the new constraint set;
        random-restart resamples the whole population around x.
        """
        self._require_active("update_constraints")
        if isinstance(updates, ConstraintUpdate):
            updates = [updates]
        new_C = apply_updates(self.constraints, list(updates), self.schema)
        if self.strategy == RANDOM_RESTART:
            rng = self._rng(_INIT_STREAM, self._init_count)
            self._init_count += 1
            self.population = init_synthetic(self.x, self.schema, new_C,
                                             self.params, rng)
        else:
            members = [m if is_feasible(self.x, m.genome, new_C)
                       else Candidate(repair(self.x, m.genome, new_C))
                       for m in self.population.members]
            self.population = Population(members, self.population.generation)
        self.constraints = new_C
        return self

    def accept(self) -> "Session":
        self._require_active("accept")
        if not self.history or not self.history[-1].result.success:
            raise SessionError("accept requires that the last proposal succeeded")
        self.status = ACCEPTED
        self.final = self.history[-1].best
        return self

    def expire(self) -> "Session":
        """Mark an idle session exhausted; no operations are permitted afterwards."""
        self._require_active("expire")
        self.status = EXHAUSTED
        return self


def start_session(x: Instance, model, train: Dataset,
                  constraints: ConstraintSet | None = None,
                  params: GAParams | None = None,
                  init: str = KNN_INIT, strategy: str = FIX_VIOLATORS) -> Session:
    return Session(x, model, train, constraints, params, init, strategy)


def step_metrics(x: Instance, result: SearchResult, weights, schema,
                 params: GAParams) -> RunMetrics:
    """Reported per-step quality figures (proximity/sparsity in normalized space)."""
    prox = spars = None
    if result.success:
        xn = Instance(normalize_matrix(x.values[None, :], schema)[0])
        cn = Instance(normalize_matrix(result.best.genome.values[None, :], schema)[0])
        prox = proximity(xn, cn, weights, schema)
        spars = sparsity(xn, cn, params.epsilon, schema)
    return RunMetrics(result.elapsed, result.generations_run, result.success,
                      prox, spars)


def run_sequence(x: Instance, model, train: Dataset,
                 update_batches, params: GAParams | None = None,
                 strategy: str = FIX_VIOLATORS, mode: str = INCREMENTAL,
                 init: str = KNN_INIT) -> list[tuple[SearchResult, RunMetrics]]:
    """Scripted constraint sequence: one search per batch.

    The first batch forms the starting constraint set; each remaining batch is
    applied between searches. An empty batch list degenerates to a single
    unconstrained search. Incremental mode reuses the evolving population via
    the session warm start; baseline mode rebuilds a fresh population under
    the cumulative constraint set at every step.
    """
    if mode not in (INCREMENTAL, BASELINE):
        raise ValueError(f"unknown mode {mode!r}")
    params = params if params is not None else GAParams()
    schema = train.schema
    batches = [list(b) for b in update_batches]
    out: list[tuple[SearchResult, RunMetrics]] = []

    if mode == INCREMENTAL:
        first = batches[0] if batches else []
        C0 = apply_updates(ConstraintSet({}), first, schema)
        s = start_session(x, model, train, C0, params, init=init, strategy=strategy)
        result, _ = s.propose()
        out.append((result, step_metrics(x, result, s.weights, schema, params)))
        for batch in batches[1:]:
            s.update_constraints(batch)
            result, _ = s.propose()
            out.append((result, step_metrics(x, result, s.weights, schema, params)))
        return out

    # baseline: fresh initialization under the cumulative constraints each step
    if int(model.predict(x)) == _FAVORABLE:
        raise SessionError(
            "instance already receives the favorable outcome; nothing to explain")
    weights = compute_weights(train)
    index = build_kd_index(train, model, _FAVORABLE)
    sets: list[ConstraintSet] = []
    C = ConstraintSet({})
    for batch in batches:
        C = apply_updates(C, batch, schema)
        sets.append(C)
    if not sets:
        sets = [C]
    for t, C_t in enumerate(sets):
        rng_init = np.random.default_rng([params.seed, _INIT_STREAM, t])
        if init == KNN_INIT:
            pop = init_knn(x, index, C_t, params, rng_init)
        else:
            pop = init_synthetic(x, schema, C_t, params, rng_init)
        rng_ev = np.random.default_rng([params.seed, _EVOLVE_STREAM, t])
        result, _ = evolve(x, pop, model, weights, C_t, schema, params, rng_ev)
        out.append((result, step_metrics(x, result, weights, schema, params)))
    return out
