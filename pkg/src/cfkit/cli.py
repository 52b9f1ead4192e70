"""Command line entry points.

The benchmark subcommands run in-process; the `client` group is a thin HTTP
client for a running service (it prints raw JSON responses). GA parameters
can be overridden anywhere with repeated `--param NAME=VALUE` flags; scenario
files may carry the same overrides in their "params" object.
"""
from __future__ import annotations

import json
import sys

import click

from . import bench
from .data import make_blobs, save_dataset
from .models import ForestParams


def _parse_params(pairs) -> dict | None:
    if not pairs:
        return None
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise click.BadParameter(f"expected NAME=VALUE, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip()] = v.strip()
    return out


param_option = click.option(
    "--param", "params", multiple=True, metavar="NAME=VALUE",
    help="Override a GA parameter (repeatable).")


@click.group()
def main() -> None:
    """Incremental counterfactual search toolkit."""


# -- data generation -----------------------------------------------------------

@main.command("synth-blobs")
@click.option("--n", default=2000, show_default=True, type=int)
@click.option("--d", default=8, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--separation", default=1.6, show_default=True, type=float)
@click.option("--out-data", required=True, type=click.Path())
@click.option("--out-schema", required=True, type=click.Path())
def synth_blobs(n, d, seed, separation, out_data, out_schema) -> None:
    """Generate the two-blob synthetic dataset."""
    ds = make_blobs(n, d, seed, separation)
    save_dataset(ds, out_data, out_schema)
    click.echo(f"wrote {n} rows to {out_data} (schema: {out_schema})")


# -- benchmark commands -----------------------------------------------------------

@main.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_model", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--ratio", default=bench.DEFAULT_SPLIT_RATIO, show_default=True,
              type=float, help="Training fraction of the split.")
@click.option("--trees", default=100, show_default=True, type=int)
@click.option("--max-depth", default=8, show_default=True, type=int)
@click.option("--min-leaf", default=2, show_default=True, type=int)
def train(data_path, schema_path, out_model, seed, ratio, trees, max_depth,
          min_leaf) -> None:
    """Train the random forest and write the model file."""
    forest = ForestParams(n_trees=trees, max_depth=max_depth, min_leaf=min_leaf)
    sys.exit(bench.cmd_train(data_path, schema_path, out_model, seed, ratio,
                             forest))


def _common_bench_options(fn):
    for deco in reversed([
        click.option("--model", "model_path", required=True,
                     type=click.Path(exists=True)),
        click.option("--data", "data_path", required=True,
                     type=click.Path(exists=True)),
        click.option("--schema", "schema_path", required=True,
                     type=click.Path(exists=True)),
        click.option("--out", "out_prefix", default=None, type=click.Path(),
                     help="Prefix for the .csv and .md outputs."),
        click.option("--runs", default=None, type=int),
        click.option("--seed", default=None, type=int),
        click.option("--max-instances", default=bench.MAX_INSTANCES_DEFAULT,
                     show_default=True, type=int),
    ]):
        fn = deco(fn)
    return fn


@main.command()
@_common_bench_options
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True))
@click.option("--method", default=None,
              type=click.Choice(["baseline", "incremental", "both"]))
@click.option("--strategy", default=None,
              type=click.Choice(["fix_violators", "random_restart"]))
@param_option
def explain(model_path, data_path, schema_path, out_prefix, runs, seed,
            max_instances, scenario_path, method, strategy, params) -> None:
    """Run a constraint scenario over all negative test instances."""
    sys.exit(bench.cmd_explain(model_path, data_path, schema_path,
                               scenario_path, out_prefix, method, strategy,
                               runs, seed, max_instances,
                               param_overrides=_parse_params(params)))


@main.command()
@_common_bench_options
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True))
@param_option
def warmstart(model_path, data_path, schema_path, out_prefix, runs, seed,
              max_instances, scenario_path, params) -> None:
    """Compare the two warm-start strategies on identical seeds."""
    sys.exit(bench.cmd_warmstart(model_path, data_path, schema_path,
                                 scenario_path, out_prefix, runs, seed,
                                 max_instances,
                                 param_overrides=_parse_params(params)))


@main.command()
@_common_bench_options
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True))
@param_option
def ordering(model_path, data_path, schema_path, out_prefix, runs, seed,
             max_instances, scenario_path, params) -> None:
    """Apply the scenario's three batches in three different orders."""
    sys.exit(bench.cmd_ordering(model_path, data_path, schema_path,
                                scenario_path, out_prefix, runs, seed,
                                max_instances,
                                param_overrides=_parse_params(params)))


@main.command("single-constraint")
@_common_bench_options
@click.option("--feature", required=True)
@click.option("--lo", default=None, type=float,
              help="Range lower bound (default: 25% into the feature's domain).")
@click.option("--hi", default=None, type=float,
              help="Range upper bound (default: 75% into the feature's domain).")
@click.option("--sense", default="increase", show_default=True,
              type=click.Choice(["increase", "decrease"]))
@param_option
def single_constraint(model_path, data_path, schema_path, out_prefix, runs,
                      seed, max_instances, feature, lo, hi, sense, params) -> None:
    """Constrain one numeric feature three ways and compare."""
    sys.exit(bench.cmd_single_constraint(
        model_path, data_path, schema_path, feature, out_prefix,
        runs if runs is not None else 5, seed if seed is not None else 0,
        lo, hi, sense, max_instances, param_overrides=_parse_params(params)))


# -- service -------------------------------------------------------------------------

@main.command()
@click.option("--bundle", "bundles", multiple=True, required=True,
              metavar="NAME=MODEL,DATA,SCHEMA",
              help="Dataset to serve (repeatable).")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--ttl", default=1800.0, show_default=True, type=float,
              help="Idle session lifetime in seconds.")
@click.option("--cors-origin", "cors_origins", multiple=True,
              help="Allowed CORS origin (repeatable; default: any).")
def serve(bundles, host, port, ttl, cors_origins) -> None:
    """Run the HTTP session service."""
    import uvicorn

    from .service import create_app, load_service_bundle

    loaded = {}
    for spec in bundles:
        if "=" not in spec or spec.count(",") != 2:
            raise click.BadParameter(
                f"expected NAME=MODEL,DATA,SCHEMA, got {spec!r}")
        name, rest = spec.split("=", 1)
        model_path, data_path, schema_path = rest.split(",")
        loaded[name] = load_service_bundle(name, model_path, data_path,
                                           schema_path)
    app = create_app(loaded, ttl_seconds=ttl,
                     cors_origins=list(cors_origins) or None)
    uvicorn.run(app, host=host, port=port)


# -- thin HTTP client -----------------------------------------------------------------

@main.group()
@click.option("--base-url", default="http://127.0.0.1:8000", show_default=True,
              envvar="CFKIT_BASE_URL")
@click.pass_context
def client(ctx, base_url) -> None:
    """Talk to a running service; prints the JSON response."""
    ctx.obj = base_url.rstrip("/")


def _request(base_url: str, method: str, path: str, payload=None) -> None:
    import httpx

    resp = httpx.request(method, base_url + path, json=payload, timeout=120.0)
    body = resp.text
    try:
        body = json.dumps(resp.json(), indent=2)
    except ValueError:
        pass
    if resp.status_code >= 400:
        click.echo(body, err=True)
        sys.exit(1)
    click.echo(body)


@client.command()
@click.pass_obj
def datasets(base_url) -> None:
    """List served datasets with their negative instances."""
    _request(base_url, "GET", "/datasets")


@client.command()
@click.argument("dataset")
@click.argument("instance_id", type=int)
@click.pass_obj
def instance(base_url, dataset, instance_id) -> None:
    _request(base_url, "GET", f"/datasets/{dataset}/instances/{instance_id}")


@client.command()
@click.argument("dataset")
@click.argument("instance_id", type=int)
@click.option("--init", default="knn", show_default=True,
              type=click.Choice(["knn", "synthetic"]))
@click.option("--strategy", default="fix_violators", show_default=True,
              type=click.Choice(["fix_violators", "random_restart"]))
@param_option
@click.pass_obj
def create(base_url, dataset, instance_id, init, strategy, params) -> None:
    """Open a session on a negative instance."""
    payload = {"dataset": dataset, "instance_id": instance_id,
               "init": init, "strategy": strategy}
    overrides = _parse_params(params)
    if overrides:
        payload["params"] = overrides
    _request(base_url, "POST", "/sessions", payload)


@client.command()
@click.argument("session_id")
@click.pass_obj
def propose(base_url, session_id) -> None:
    _request(base_url, "POST", f"/sessions/{session_id}/propose")


@client.command()
@click.argument("session_id")
@click.argument("updates")
@click.pass_obj
def constrain(base_url, session_id, updates) -> None:
    """Apply constraint updates; UPDATES is inline JSON or @file.json."""
    if updates.startswith("@"):
        with open(updates[1:], encoding="utf-8") as f:
            parsed = json.load(f)
    else:
        parsed = json.loads(updates)
    if isinstance(parsed, dict):
        parsed = [parsed]
    _request(base_url, "POST", f"/sessions/{session_id}/constraints",
             {"updates": parsed})


@client.command()
@click.argument("session_id")
@click.pass_obj
def accept(base_url, session_id) -> None:
    _request(base_url, "POST", f"/sessions/{session_id}/accept")


@client.command()
@click.argument("session_id")
@click.pass_obj
def history(base_url, session_id) -> None:
    _request(base_url, "GET", f"/sessions/{session_id}/history")


@client.command()
@click.argument("session_id")
@click.pass_obj
def delete(base_url, session_id) -> None:
    _request(base_url, "DELETE", f"/sessions/{session_id}")


if __name__ == "__main__":
    main()
