"""Evolutionary counterfactual search: initialization, fitness, selection, variation.

The fitness of a candidate x' against the original instance x is

    -lambda1 * (sum_i w_i |x_i - x'_i| / sum_i w_i)   (weighted proximity)
    -lambda2 * sum_i I(|x_i - x'_i| > epsilon)        (raw changed-feature count)
    +lambda3 * L_pred                                  (alpha on flip, -beta otherwise)

computed in normalized feature space with the overlap metric (0/1) on
categorical features. Higher is better. Every genome that enters a population
has passed through constraint repair, so feasibility is closed under all
operators here.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, fields as dataclass_fields

import numpy as np

from .constraints import ConstraintSet, repair
from .data import (FeatureSchema, FeatureWeights, Instance, feature_diffs,
                   normalize_matrix)
from .neighbors import KdIndex, numeric_projection

SUS = "sus"
TOURNAMENT = "tournament"

#: improvement smaller than this does not reset the patience counter
CONVERGENCE_TOL = 1e-9
#: shift offset keeping SUS shares strictly positive
SUS_DELTA = 1e-9


@dataclass(frozen=True)
class GAParams:
    population_size: int = 50
    knn_k: int = 50
    max_generations: int = 50
    patience: int = 3
    crossover_rate: float = 0.8
    mutation_rate: float = 0.2
    mutation_scale: float = 0.1
    lambda1: float = 0.2
    lambda2: float = 0.2
    lambda3: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    epsilon: float = 1e-5
    selection: str = SUS
    tournament_k: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        for name in ("crossover_rate", "mutation_rate"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("lambda weights must be non-negative")
        if self.selection not in (SUS, TOURNAMENT):
            raise ValueError(f"unknown selection scheme {self.selection!r}")
        if self.selection == TOURNAMENT and self.tournament_k < 1:
            raise ValueError("tournament_k must be >= 1")
        if self.knn_k < 1 or self.max_generations < 1 or self.patience < 1:
            raise ValueError("knn_k, max_generations and patience must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def params_from_dict(overrides: dict | None) -> GAParams:
    """Build GAParams from a plain mapping, coercing values to field types."""
    if not overrides:
        return GAParams()
    defaults = GAParams()
    valid = {f.name for f in dataclass_fields(GAParams)}
    bad = set(overrides) - valid
    if bad:
        raise ValueError(f"unknown GA parameter(s): {', '.join(sorted(bad))}")
    kwargs = {k: type(getattr(defaults, k))(v) for k, v in overrides.items()}
    return GAParams(**kwargs)


@dataclass
class Candidate:
    genome: Instance
    fitness: float = math.nan
    flips: bool = False


@dataclass
class Population:
    members: list[Candidate]
    generation: int = 0

    def genomes(self) -> np.ndarray:
        return np.stack([m.genome.values for m in self.members])

    def fitnesses(self) -> np.ndarray:
        return np.array([m.fitness for m in self.members])


@dataclass(frozen=True)
class SearchResult:
    best: Candidate | None
    generations_run: int
    success: bool
    elapsed: float = field(compare=False, default=0.0)


class _Evaluator:
    """Caches the normalized original instance and scores genome batches."""

    def __init__(self, schema: FeatureSchema, x: Instance, model,
                 weights: FeatureWeights, params: GAParams):
        self.schema = schema
        self.model = model
        self.weights = weights
        self.params = params
        self.x_norm = normalize_matrix(x.values[None, :], schema)[0]
        self.x_label = int(model.predict_batch(x.values[None, :])[0])

    def score(self, genomes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = self.params
        norm = normalize_matrix(genomes, self.schema)
        diffs = feature_diffs(self.schema, norm, self.x_norm)
        prox = diffs @ self.weights.w / self.weights.w.sum()
        changed = (diffs > p.epsilon).sum(axis=1)
        flips = self.model.predict_batch(genomes) != self.x_label
        fit = (-p.lambda1 * prox - p.lambda2 * changed
               + p.lambda3 * np.where(flips, p.alpha, -p.beta))
        return fit, flips

    def make_candidates(self, genomes: np.ndarray) -> list[Candidate]:
        fit, flips = self.score(genomes)
        return [Candidate(Instance(g), float(f), bool(fl))
                for g, f, fl in zip(genomes, fit, flips)]


def l_pred(model, x: Instance, cand: Instance, params: GAParams) -> float:
    """Prediction pressure: alpha when cand flips the model's verdict on x, else -beta."""
    flips = model.predict(cand) != model.predict(x)
    return params.alpha if flips else -params.beta


def fitness(x: Instance, cand: Instance, weights: FeatureWeights, model,
            params: GAParams, schema: FeatureSchema) -> float:
    ev = _Evaluator(schema, x, model, weights, params)
    fit, _ = ev.score(cand.values[None, :])
    return float(fit[0])


# -- initialization ---------------------------------------------------------------

def init_knn(x: Instance, index: KdIndex, C: ConstraintSet, params: GAParams,
             rng: np.random.Generator) -> Population:
    """Seed the population with repaired nearest opposite-class neighbors.

    When fewer neighbors than population_size are available, the remainder is
    filled with freshly mutated copies of the neighbors (still repaired).
    """
    q = numeric_projection(index.schema, x.values)[0]
    hits = index.query(q, min(params.knn_k, len(index)))
    neighbors = [index.row(i) for _, i in hits]
    members = [Candidate(repair(x, nb, C)) for nb in neighbors[: params.population_size]]
    i = 0
    while len(members) < params.population_size:
        base = neighbors[i % len(neighbors)]
        members.append(Candidate(mutate(base, x, C, index.schema, params, rng)))
        i += 1
    return Population(members, generation=0)


def init_synthetic(x: Instance, schema: FeatureSchema, C: ConstraintSet,
                   params: GAParams, rng: np.random.Generator) -> Population:
    """Perturb x feature-wise (uniform offsets / category resampling), then repair."""
    members = []
    for _ in range(params.population_size):
        members.append(Candidate(repair(x, Instance(_perturb(x.values, schema, params, rng)), C)))
    return Population(members, generation=0)


def _perturb(values: np.ndarray, schema: FeatureSchema, params: GAParams,
             rng: np.random.Generator) -> np.ndarray:
    out = np.array(values)
    mask = rng.random(schema.d) < params.mutation_rate
    for i in np.flatnonzero(mask):
        spec = schema.feature(i)
        if spec.is_numeric:
            lo, hi = spec.bounds if spec.bounds is not None else (0.0, 1.0)
            out[i] += rng.uniform(-params.mutation_scale, params.mutation_scale) * (hi - lo)
        else:
            out[i] = _resample_category(out[i], len(spec.categories), rng)
    return out


def _resample_category(code: float, n_categories: int, rng: np.random.Generator) -> float:
    if n_categories < 2:
        return code
    j = int(rng.integers(n_categories - 1))
    if j >= int(code):
        j += 1
    return float(j)


# -- selection ---------------------------------------------------------------------

def sus_select(pop: Population, n: int, rng: np.random.Generator) -> list[Candidate]:
    """Stochastic universal sampling: one spin, n equally spaced pointers.

    Fitness values are shifted by (min - delta) so shares are strictly
    positive even when the raw fitness is negative.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    fits = pop.fitnesses()
    shifted = fits - fits.min() + SUS_DELTA
    cum = np.cumsum(shifted)
    step = cum[-1] / n
    pointers = rng.uniform(0.0, step) + step * np.arange(n)
    idx = np.searchsorted(cum, pointers, side="right")
    return [pop.members[i] for i in idx]


def tournament_select(pop: Population, n: int, k: int,
                      rng: np.random.Generator) -> list[Candidate]:
    """Each parent is the best of k uniform draws with replacement (ties -> lower index)."""
    m = len(pop.members)
    if not (1 <= k <= m):
        raise ValueError(f"tournament size {k} out of range for population of {m}")
    fits = pop.fitnesses()
    out = []
    for _ in range(n):
        draws = rng.integers(0, m, size=k)
        best = min(draws, key=lambda i: (-fits[i], i))
        out.append(pop.members[int(best)])
    return out


def _select(pop: Population, n: int, params: GAParams,
            rng: np.random.Generator) -> list[Candidate]:
    if params.selection == TOURNAMENT:
        return tournament_select(pop, n, params.tournament_k, rng)
    return sus_select(pop, n, rng)


# -- variation ----------------------------------------------------------------------

def crossover(a: Instance, b: Instance, rate: float,
              rng: np.random.Generator) -> tuple[Instance, Instance]:
    """Uniform crossover with probability rate; otherwise copies of the parents."""
    if rng.random() < rate:
        swap = rng.random(len(a.values)) < 0.5
        c1 = np.where(swap, b.values, a.values)
        c2 = np.where(swap, a.values, b.values)
        return Instance(c1), Instance(c2)
    return Instance(np.array(a.values)), Instance(np.array(b.values))


def mutate(cand: Instance, x: Instance, C: ConstraintSet, schema: FeatureSchema,
           params: GAParams, rng: np.random.Generator) -> Instance:
    """Gaussian jitter on numerics / category resampling, followed by repair."""
    out = np.array(cand.values)
    mask = rng.random(schema.d) < params.mutation_rate
    for i in np.flatnonzero(mask):
        spec = schema.feature(i)
        if spec.is_numeric:
            lo, hi = spec.bounds if spec.bounds is not None else (0.0, 1.0)
            out[i] += rng.normal(0.0, params.mutation_scale) * (hi - lo)
        else:
            out[i] = _resample_category(out[i], len(spec.categories), rng)
    return repair(x, Instance(out), C)


# -- the search loop ------------------------------------------------------------------

def evolve(x: Instance, pop: Population, model, weights: FeatureWeights,
           C: ConstraintSet, schema: FeatureSchema, params: GAParams,
           rng: np.random.Generator | None = None) -> tuple[SearchResult, Population]:
    """Run the generational loop until patience expires or max_generations.

    Returns the search result (carrying the best flipping candidate seen, if
    any) and the final population for warm starting. The best-fitness member
    always survives into the next generation (keep-best-1 elitism); a
    generation counts as stale when the best fitness improves by no more than
    CONVERGENCE_TOL.
    """
    t0 = time.perf_counter()
    if rng is None:
        rng = np.random.default_rng(params.seed)
    ev = _Evaluator(schema, x, model, weights, params)
    n = params.population_size

    members = ev.make_candidates(pop.genomes())
    pop = Population(members, pop.generation)
    elite = max(members, key=lambda c: c.fitness)
    best_fit = elite.fitness
    best_flipper = _best_flipper(members, None)

    gens = 0
    stale = 0
    while gens < params.max_generations and stale < params.patience:
        parents = _select(pop, n, params, rng)
        child_genomes = []
        for i in range(0, n, 2):
            p1 = parents[i]
            p2 = parents[(i + 1) % n]
            c1, c2 = crossover(p1.genome, p2.genome, params.crossover_rate, rng)
            child_genomes.append(mutate(c1, x, C, schema, params, rng).values)
            if len(child_genomes) < n:
                child_genomes.append(mutate(c2, x, C, schema, params, rng).values)
        children = ev.make_candidates(np.stack(child_genomes))

        # keep-best-1 elitism: the best individual so far replaces the worst child
        worst = min(range(n), key=lambda i: children[i].fitness)
        children[worst] = elite

        pop = Population(children, pop.generation + 1)
        gens += 1
        gen_best = max(children, key=lambda c: c.fitness)
        if gen_best.fitness > elite.fitness:
            elite = gen_best
        best_flipper = _best_flipper(children, best_flipper)
        if elite.fitness - best_fit > CONVERGENCE_TOL:
            best_fit = elite.fitness
            stale = 0
        else:
            stale += 1

    elapsed = time.perf_counter() - t0
    success = best_flipper is not None
    return SearchResult(best_flipper, gens, success, elapsed), pop


def _best_flipper(members: list[Candidate], incumbent: Candidate | None) -> Candidate | None:
    best = incumbent
    for c in members:
        if c.flips and (best is None or c.fitness > best.fitness):
            best = c
    return best
