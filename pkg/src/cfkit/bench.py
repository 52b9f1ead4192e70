"""Benchmark harness: scripted constraint scenarios over many instances.

Every command writes a per-run CSV (fixed column order, see metrics) and a
markdown table that is a pure aggregation of that CSV. Per-task seeds are
derived from (master seed, instance id, run index) so results do not depend
on worker scheduling; the CSV is byte-stable across reruns except for the
elapsed_ms column. Worker count comes from the CFKIT_WORKERS environment
variable (default: one per CPU).
"""
from __future__ import annotations

import csv
import json
import os
import sys
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .constraints import (ADD, ConstraintSet, ConstraintUpdate, Direction,
                          Immutable, Range, apply_updates, update_from_wire)
from .data import Dataset, FeatureSchema, load_dataset, train_test_split
from .engine import GAParams, params_from_dict
from .metrics import (CSV_COLUMNS, AggregateStats, RunMetrics, aggregate,
                      metrics_csv_row, welch_t_test)
from .models import (ForestParams, load_model, negative_indices, save_model,
                     train_random_forest)
from .session import (BASELINE, FIX_VIOLATORS, INCREMENTAL, RANDOM_RESTART,
                      run_sequence)

WORKERS_ENV = "CFKIT_WORKERS"
MAX_INSTANCES_DEFAULT = 500
DEFAULT_SPLIT_RATIO = 0.8

TABLE_HEADERS = ("Time (s)", "Gens", "CFs (%)", "Proximity", "Sparsity")
_METHODS = (BASELINE, INCREMENTAL)
_STRATEGIES = (FIX_VIOLATORS, RANDOM_RESTART)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    """A scripted experiment: constraint sequence plus run configuration."""
    name: str
    dataset: str
    sequence: tuple[tuple[ConstraintUpdate, ...], ...]
    method: str = INCREMENTAL
    strategy: str = FIX_VIOLATORS
    runs: int = 5
    seed: int = 0
    params: dict | None = None

    def __post_init__(self) -> None:
        if not self.sequence:
            raise ScenarioError("scenario sequence must not be empty")
        if self.runs < 1:
            raise ScenarioError("runs must be >= 1")
        if self.method not in _METHODS:
            raise ScenarioError(f"unknown method {self.method!r}")
        if self.strategy not in _STRATEGIES:
            raise ScenarioError(f"unknown strategy {self.strategy!r}")


def load_scenario(path: str, schema: FeatureSchema) -> Scenario:
    """Parse a scenario JSON file; update batches reference features by name."""
    with open(path, encoding="utf-8") as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as e:
            raise ScenarioError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(obj, dict) or "sequence" not in obj:
        raise ScenarioError(f"{path}: scenario object needs a sequence")
    raw_seq = obj["sequence"]
    if not isinstance(raw_seq, list) or not all(isinstance(b, list) for b in raw_seq):
        raise ScenarioError(f"{path}: sequence must be a list of update batches")
    sequence = tuple(tuple(update_from_wire(u, schema) for u in batch)
                     for batch in raw_seq)
    name = str(obj.get("name") or os.path.splitext(os.path.basename(path))[0])
    return Scenario(
        name=name,
        dataset=str(obj.get("dataset", name)),
        sequence=sequence,
        method=str(obj.get("method", INCREMENTAL)),
        strategy=str(obj.get("strategy", FIX_VIOLATORS)),
        runs=int(obj.get("runs", 5)),
        seed=int(obj.get("seed", 0)),
        params=obj.get("params"),
    )


def ga_params(overrides: dict | None = None) -> GAParams:
    """Build GAParams from a plain dict of overrides (any field by name)."""
    try:
        return params_from_dict(overrides)
    except ValueError as e:
        raise ScenarioError(str(e)) from e


# -- seeds and workers -----------------------------------------------------------

def replicate_seed(master_seed: int, run_index: int) -> int:
    """The value recorded in the CSV seed column, one per replicate."""
    return int(np.random.SeedSequence([master_seed, run_index])
               .generate_state(1, np.uint32)[0])


def session_seed(master_seed: int, instance_id: int, run_index: int) -> int:
    """Seed for one (instance, run) search; independent of scheduling order."""
    return int(np.random.SeedSequence([master_seed, instance_id, run_index])
               .generate_state(1, np.uint32)[0])


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if raw:
        return max(1, int(raw))
    return max(1, os.cpu_count() or 1)


def subsample_instances(indices, max_instances: int, seed: int) -> list[int]:
    indices = list(int(i) for i in indices)
    if len(indices) <= max_instances:
        return indices
    rng = np.random.default_rng([seed, len(indices)])
    pick = rng.choice(len(indices), size=max_instances, replace=False)
    return sorted(indices[j] for j in pick)


# -- the generic multi-arm runner ---------------------------------------------------

@dataclass(frozen=True)
class Arm:
    """One table row: a label plus the configuration that produces it."""
    label: str
    mode: str
    strategy: str
    sequence: tuple[tuple[ConstraintUpdate, ...], ...]


@dataclass(frozen=True)
class RunRecord:
    method: str
    seed: int
    instance_id: int
    run_index: int
    step: int
    metrics: RunMetrics


def run_arms(model, train: Dataset, test: Dataset, arms: list[Arm], runs: int,
             master_seed: int, max_instances: int = MAX_INSTANCES_DEFAULT,
             base_params: GAParams | None = None) -> list[RunRecord]:
    """Explain every (subsampled) negative test instance `runs` times per arm."""
    base = base_params if base_params is not None else GAParams()
    negatives = negative_indices(model, test)
    chosen = subsample_instances(negatives, max_instances, master_seed)
    tasks = [(arm, i, r) for arm in arms for i in chosen for r in range(runs)]

    def one(task) -> list[RunRecord]:
        arm, i, r = task
        x = test.row(i)
        p = replace(base, seed=session_seed(master_seed, i, r))
        steps = run_sequence(x, model, train, arm.sequence, p,
                             strategy=arm.strategy, mode=arm.mode)
        rep = replicate_seed(master_seed, r)
        return [RunRecord(arm.label, rep, i, r, t, rm)
                for t, (_, rm) in enumerate(steps)]

    if worker_count() > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=worker_count()) as ex:
            chunks = list(ex.map(one, tasks))
    else:
        chunks = [one(t) for t in tasks]
    records = [rec for chunk in chunks for rec in chunk]
    records.sort(key=lambda rec: (rec.method, rec.instance_id, rec.run_index, rec.step))
    return records


# -- emission ------------------------------------------------------------------------

def write_records_csv(path: str, dataset_label: str, records: list[RunRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in records:
            w.writerow(metrics_csv_row(dataset_label, rec.method, rec.seed,
                                       rec.instance_id, rec.step, rec.metrics))


def markdown_table(headers, rows) -> str:
    lines = ["| " + " | ".join(str(h) for h in headers) + " |",
             "| " + " | ".join("---" for _ in headers) + " |"]
    for row in rows:
        lines.append("| " + " | ".join(str(c) for c in row) + " |")
    return "\n".join(lines) + "\n"


def _pm(mean: float | None, std: float | None, nd: int = 3) -> str:
    if mean is None:
        return "n/a"
    return f"{mean:.{nd}f} ± {std:.{nd}f}"


def stats_row(label: str, stats: AggregateStats) -> list[str]:
    return [label,
            _pm(stats.elapsed_mean, stats.elapsed_std),
            _pm(stats.generations_mean, stats.generations_std, 1),
            f"{stats.cf_rate:.1f}",
            _pm(stats.proximity_mean, stats.proximity_std, 4),
            _pm(stats.sparsity_mean, stats.sparsity_std, 4)]


def arm_table(records: list[RunRecord], first_header: str) -> str:
    by_label: dict[str, list[RunMetrics]] = defaultdict(list)
    order: list[str] = []
    for rec in records:
        if rec.method not in by_label:
            order.append(rec.method)
        by_label[rec.method].append(rec.metrics)
    rows = [stats_row(label, aggregate(by_label[label])) for label in order]
    return markdown_table((first_header,) + TABLE_HEADERS, rows)


METRIC_KEYS = ("time", "gens", "cf", "proximity", "sparsity")


def seed_rollup(records: list[RunRecord], key: str) -> dict[int, float | None]:
    """Per-replicate-seed aggregate of one metric (quality metrics over found runs)."""
    if key not in METRIC_KEYS:
        raise ValueError(f"unknown metric key {key!r}")
    by_seed: dict[int, list[RunMetrics]] = defaultdict(list)
    for rec in records:
        by_seed[rec.seed].append(rec.metrics)
    out: dict[int, float | None] = {}
    for s, ms in sorted(by_seed.items()):
        if key == "time":
            out[s] = float(np.mean([m.elapsed for m in ms]))
        elif key == "gens":
            out[s] = float(np.mean([m.generations for m in ms]))
        elif key == "cf":
            out[s] = 100.0 * float(np.mean([m.found for m in ms]))
        else:
            vals = [getattr(m, key) for m in ms if m.found]
            out[s] = float(np.mean(vals)) if vals else None
    return out


def _p_value(a_records, b_records, key) -> float | None:
    a = [v for v in seed_rollup(a_records, key).values() if v is not None]
    b = [v for v in seed_rollup(b_records, key).values() if v is not None]
    if len(a) < 2 or len(b) < 2:
        return None
    return welch_t_test(a, b)


# -- commands -------------------------------------------------------------------------

def _echo_err(msg: str) -> None:
    print(msg, file=sys.stderr)


def load_split_bundle(model_path: str, data_path: str, schema_path: str):
    """Load model + data and recreate the train/test split stored with the model."""
    model = load_model(model_path)
    ds = load_dataset(data_path, schema_path)
    if model.schema.to_dict() != ds.schema.to_dict():
        raise ScenarioError("model schema does not match the dataset schema")
    ratio = float(model.extra.get("split_ratio", DEFAULT_SPLIT_RATIO))
    split_seed = int(model.extra.get("split_seed", 0))
    train, test = train_test_split(ds, ratio, split_seed)
    return model, train, test


def cmd_train(data_path: str, schema_path: str, out_model: str, seed: int,
              ratio: float = DEFAULT_SPLIT_RATIO,
              forest: ForestParams | None = None, echo=print) -> int:
    """Train the forest, report test accuracy and negative count, write the model."""
    try:
        ds = load_dataset(data_path, schema_path)
        train, test = train_test_split(ds, ratio, seed)
        model = train_random_forest(train, forest or ForestParams(), seed)
        acc = float(np.mean(model.predict_batch(test.X) == test.y))
        negs = negative_indices(model, test)
        model.extra.update({
            "split_ratio": ratio,
            "split_seed": seed,
            "test_accuracy": acc,
            "n_train": len(train.X),
            "n_test": len(test.X),
        })
        save_model(model, out_model)
    except Exception as e:
        _echo_err(f"train failed: {e}")
        return 1
    echo(f"trained on {len(train.X)} rows, tested on {len(test.X)}")
    echo(f"test accuracy: {acc:.4f}")
    echo(f"negative test instances: {len(negs)}")
    echo(f"model written to {out_model}")
    return 0


def _emit(records, dataset_label, out_prefix, table, echo) -> None:
    if out_prefix:
        write_records_csv(out_prefix + ".csv", dataset_label, records)
        with open(out_prefix + ".md", "w", encoding="utf-8") as f:
            f.write(table)
        echo(f"per-run metrics: {out_prefix}.csv")
    echo(table)


def _merged_params(scenario_params: dict | None,
                   overrides: dict | None) -> GAParams:
    merged = dict(scenario_params or {})
    merged.update(overrides or {})
    return ga_params(merged)


def cmd_explain(model_path: str, data_path: str, schema_path: str,
                scenario_path: str, out_prefix: str | None = None,
                method: str | None = None, strategy: str | None = None,
                runs: int | None = None, seed: int | None = None,
                max_instances: int = MAX_INSTANCES_DEFAULT, echo=print,
                param_overrides: dict | None = None) -> int:
    """Run a scenario over all negative test instances; emit CSV + summary table."""
    try:
        model, train, test = load_split_bundle(model_path, data_path, schema_path)
        sc = load_scenario(scenario_path, train.schema)
        if method is not None and method not in _METHODS + ("both",):
            raise ScenarioError(f"unknown method {method!r}")
        chosen = method or sc.method
        methods = list(_METHODS) if chosen == "both" else [chosen]
        strat = strategy or sc.strategy
        if strat not in _STRATEGIES:
            raise ScenarioError(f"unknown strategy {strat!r}")
        arms = [Arm(m, m, strat, sc.sequence) for m in methods]
        records = run_arms(model, train, test, arms,
                           runs if runs is not None else sc.runs,
                           seed if seed is not None else sc.seed,
                           max_instances,
                           _merged_params(sc.params, param_overrides))
        table = arm_table(records, "Method")
    except Exception as e:
        _echo_err(f"explain failed: {e}")
        return 1
    _emit(records, sc.dataset, out_prefix, table, echo)
    return 0


def cmd_warmstart(model_path: str, data_path: str, schema_path: str,
                  scenario_path: str, out_prefix: str | None = None,
                  runs: int | None = None, seed: int | None = None,
                  max_instances: int = MAX_INSTANCES_DEFAULT, echo=print,
                  param_overrides: dict | None = None) -> int:
    """Compare warm-start strategies on identical seeds; emit p-values per metric."""
    try:
        model, train, test = load_split_bundle(model_path, data_path, schema_path)
        sc = load_scenario(scenario_path, train.schema)
        arms = [Arm(s, INCREMENTAL, s, sc.sequence) for s in _STRATEGIES]
        records = run_arms(model, train, test, arms,
                           runs if runs is not None else sc.runs,
                           seed if seed is not None else sc.seed,
                           max_instances,
                           _merged_params(sc.params, param_overrides))
        fix = [r for r in records if r.method == FIX_VIOLATORS]
        rnd = [r for r in records if r.method == RANDOM_RESTART]
        p_cells = ["p-value"]
        for key in METRIC_KEYS:
            p = _p_value(fix, rnd, key)
            p_cells.append("n/a" if p is None else f"{p:.4f}")
        # table order matches METRIC_KEYS: time, gens, cf, proximity, sparsity
        rows = [stats_row(FIX_VIOLATORS, aggregate([r.metrics for r in fix])),
                stats_row(RANDOM_RESTART, aggregate([r.metrics for r in rnd])),
                p_cells]
        table = markdown_table(("Strategy",) + TABLE_HEADERS, rows)
    except Exception as e:
        _echo_err(f"warmstart failed: {e}")
        return 1
    _emit(records, sc.dataset, out_prefix, table, echo)
    return 0


def _batch_letter(batch: tuple[ConstraintUpdate, ...]) -> str:
    kinds = {type(u.constraint).__name__ for u in batch if u.constraint is not None}
    names = {"Immutable": "I", "Range": "R", "Direction": "D"}
    if len(kinds) == 1:
        return names.get(kinds.pop(), "M")
    return "M" if kinds else "-"


ORDERING_PERMUTATIONS = ((0, 1, 2), (1, 0, 2), (2, 0, 1))


def cmd_ordering(model_path: str, data_path: str, schema_path: str,
                 scenario_path: str, out_prefix: str | None = None,
                 runs: int | None = None, seed: int | None = None,
                 max_instances: int = MAX_INSTANCES_DEFAULT, echo=print,
                 param_overrides: dict | None = None) -> int:
    """Apply the scenario's three batches in three orders; compare outcomes."""
    try:
        model, train, test = load_split_bundle(model_path, data_path, schema_path)
        sc = load_scenario(scenario_path, train.schema)
        if len(sc.sequence) != 3:
            raise ScenarioError("ordering comparison needs exactly 3 update batches")
        arms = []
        for perm in ORDERING_PERMUTATIONS:
            seq = tuple(sc.sequence[j] for j in perm)
            label = "->".join(_batch_letter(b) for b in seq)
            arms.append(Arm(label, sc.method, sc.strategy, seq))
        records = run_arms(model, train, test, arms,
                           runs if runs is not None else sc.runs,
                           seed if seed is not None else sc.seed,
                           max_instances,
                           _merged_params(sc.params, param_overrides))
        table = arm_table(records, "Ordering")
    except Exception as e:
        _echo_err(f"ordering failed: {e}")
        return 1
    _emit(records, sc.dataset, out_prefix, table, echo)
    return 0


def final_constraint_set(schema: FeatureSchema,
                         sequence: tuple[tuple[ConstraintUpdate, ...], ...]) -> ConstraintSet:
    C = ConstraintSet({})
    for batch in sequence:
        C = apply_updates(C, list(batch), schema)
    return C


def cmd_single_constraint(model_path: str, data_path: str, schema_path: str,
                          feature: str, out_prefix: str | None = None,
                          runs: int = 5, seed: int = 0,
                          lo: float | None = None, hi: float | None = None,
                          sense: str = "increase",
                          max_instances: int = MAX_INSTANCES_DEFAULT,
                          echo=print, param_overrides: dict | None = None) -> int:
    """Constrain one numeric feature three ways (immutable/range/direction)."""
    try:
        model, train, test = load_split_bundle(model_path, data_path, schema_path)
        schema = train.schema
        idx = schema.feature_index(feature)
        spec = schema.feature(idx)
        if not spec.is_numeric:
            raise ScenarioError(
                f"feature {feature!r} is categorical; range and direction need a numeric feature")
        b_lo, b_hi = spec.bounds
        span = b_hi - b_lo
        r_lo = b_lo + 0.25 * span if lo is None else lo
        r_hi = b_hi - 0.25 * span if hi is None else hi
        variants = [
            ("immutable", Immutable()),
            ("range", Range(r_lo, r_hi)),
            ("direction", Direction(sense)),
        ]
        arms = [Arm(label, INCREMENTAL, FIX_VIOLATORS,
                    ((ConstraintUpdate(ADD, idx, c),),))
                for label, c in variants]
        records = run_arms(model, train, test, arms, runs, seed, max_instances,
                           _merged_params(None, param_overrides))
        table = arm_table(records, "Constraint")
    except Exception as e:
        _echo_err(f"single-constraint failed: {e}")
        return 1
    dataset_label = os.path.splitext(os.path.basename(data_path))[0]
    _emit(records, dataset_label, out_prefix, table, echo)
    return 0
