"""Command line entry point: ``graphrag-irl <command> [options]``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure, 4 provider failure.
"""

from __future__ import annotations

import logging
import sys
import time
from pathlib import Path

import click

from . import config as config_mod
from .errors import GraphRagIrlError
from .experiment import (ALL_SPECS, Experiment, build_graph_stage, format_stats, format_sweep, model_name,
                         prepare, write_graph, write_prepare)

log = logging.getLogger("graphrag_irl")


def _load(ctx: click.Context, **flags) -> config_mod.ExperimentConfig:
    """Config file plus --set overrides plus explicit flags (flags win)."""
    obj = ctx.obj
    overrides = dict(config_mod.parse_override(s) for s in obj["sets"])
    if obj["output_dir"] is not None:
        overrides["output_dir"] = obj["output_dir"]
    if obj["data"] is not None:
        overrides["dataset.path"] = obj["data"]
    if obj["jobs"] is not None:
        overrides["jobs"] = obj["jobs"]
    if obj["seeds"]:
        overrides["seeds"] = [int(s) for s in obj["seeds"].split(",")]
    for k, v in flags.items():
        if v is not None:
            overrides[k] = v
    return config_mod.load_config(obj["config"], overrides)


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except GraphRagIrlError as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(exc.exit_code)


@click.group(cls=_Group)
@click.option("-c", "--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Experiment config (YAML). Defaults are used for missing keys.")
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE", help="Override a config key, e.g. train.lr=0.01.")
@click.option("--output-dir", default=None, help="Mirrors output_dir.")
@click.option("--data", default=None, help="Mirrors dataset.path.")
@click.option("--seeds", default=None, help="Comma-separated training seeds; mirrors seeds.")
@click.option("--jobs", type=int, default=None, help="Worker bound; mirrors jobs.")
@click.option("-v", "--verbose", count=True)
@click.pass_context
def main(ctx, config_path, sets, output_dir, data, seeds, jobs, verbose):
    """Graph-grounded listwise IRL recommender with LLM re-ranking."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    ctx.obj = {"config": config_path, "sets": sets, "output_dir": output_dir, "data": data,
               "seeds": seeds, "jobs": jobs}


@main.command("config-reference")
def config_reference():
    """Print every config key with its default."""
    click.echo(config_mod.reference(), nl=False)


@main.command("show-config")
@click.pass_context
def show_config(ctx):
    """Print the resolved config and its hash."""
    cfg = _load(ctx)
    click.echo(f"# config hash {cfg.hash()}")
    click.echo(cfg.dump(), nl=False)


@main.command("prepare")
@click.pass_context
def cmd_prepare(ctx):
    """Load, filter and split the dataset; sample evaluation candidates."""
    cfg = _load(ctx)
    t0 = time.perf_counter()
    prep = prepare(cfg)
    d = write_prepare(prep, Path(cfg.output_dir))
    click.echo(format_stats(prep.stats()), nl=False)
    click.echo(f"artifacts: {d}  ({time.perf_counter() - t0:.1f}s)")


@main.command("build-graph")
@click.option("--sweep", is_flag=True, help="Print the concept-threshold sweep table.")
@click.option("--min-concept-freq", type=int, default=None, help="Mirrors graph.min_concept_freq.")
@click.option("--calibrate-to", type=int, default=None, help="Mirrors graph.calibrate_to.")
@click.pass_context
def cmd_build_graph(ctx, sweep, min_concept_freq, calibrate_to):
    """Build the item/category/concept graph and the text index."""
    cfg = _load(ctx, **{"graph.min_concept_freq": min_concept_freq, "graph.calibrate_to": calibrate_to})
    t0 = time.perf_counter()
    prep = prepare(cfg)
    bundle = build_graph_stage(cfg, prep)
    d = write_graph(bundle, Path(cfg.output_dir))
    if sweep:
        click.echo(format_sweep(bundle.sweep), nl=False)
    s = bundle.graph.stats()
    n, e = s["nodes"], s["edges"]
    click.echo(f"threshold {bundle.threshold}: {s['total_nodes']} nodes ({n['item']} items / {n['category']} "
               f"categories / {n['concept']} concepts), {s['total_edges']} edges (item-category "
               f"{e['item_category']}, item-concept {e['item_concept']}, item-item {e['item_item']})")
    click.echo(f"artifacts: {d}  ({time.perf_counter() - t0:.1f}s)")


def _model_names(linear: bool | None, no_graph: bool | None, cfg) -> list[str]:
    variant = "linear" if linear else cfg.train.variant
    graph = cfg.features.graph and not no_graph
    return [model_name("irl", variant, graph)]


@main.command("train")
@click.option("--linear", is_flag=True, default=None, help="Train the linear reward ablation.")
@click.option("--no-graph", is_flag=True, default=None, help="Drop the four graph features.")
@click.option("--all", "all_models", is_flag=True, help="Train every ablation cell (including supervised).")
@click.option("--retrain", is_flag=True, help="Ignore existing checkpoints.")
@click.pass_context
def cmd_train(ctx, linear, no_graph, all_models, retrain):
    """Train reward model(s) for every configured seed."""
    cfg = _load(ctx, **{"train.variant": "linear" if linear else None,
                        "features.graph": False if no_graph else None})
    names = [s.name for s in ALL_SPECS] if all_models else _model_names(linear, no_graph, cfg)
    ex = Experiment(cfg)
    for seed in cfg.seeds:
        for n, t in ex.models(seed, names, retrain=retrain).items():
            click.echo(f"seed {seed} {n}: {t.info}")
    click.echo(f"checkpoints: {ex.run_dir}")


@main.command("evaluate")
@click.option("--baselines", is_flag=True, help="Add random, popularity and supervised rows.")
@click.option("--all", "all_models", is_flag=True, help="Evaluate every ablation cell.")
@click.option("--linear", is_flag=True, default=None)
@click.option("--no-graph", is_flag=True, default=None)
@click.pass_context
def cmd_evaluate(ctx, baselines, all_models, linear, no_graph):
    """Score the test candidates and write reports (trains missing models)."""
    cfg = _load(ctx, **{"train.variant": "linear" if linear else None,
                        "features.graph": False if no_graph else None})
    names = [s.name for s in ALL_SPECS] if all_models else _model_names(linear, no_graph, cfg)
    if baselines and not all_models:
        graph = cfg.features.graph and not no_graph
        names = ["supervised+graph" if graph else "supervised"] + names
    ex = Experiment(cfg)
    result = ex.evaluate(names, baselines=baselines or all_models)
    click.echo(result.report_text(), nl=False)
    click.echo(f"reports: {ex.run_dir}")


def _provider(cfg, name):
    return cfg.provider(name) if name else cfg.rerank.providers[0]


@main.command("rerank")
@click.option("--provider", default=None, help="Provider name from rerank.providers (default: first).")
@click.option("--plain", is_flag=True, default=None, help="Candidate details only, no persona/community.")
@click.option("--gate/--no-gate", default=None, help="Mirrors rerank.gate (boost-only).")
@click.pass_context
def cmd_rerank(ctx, provider, plain, gate):
    """Re-rank the top-N shortlist with an LLM provider and fuse with alpha*."""
    cfg = _load(ctx, **{"rerank.plain": plain, "rerank.gate": gate})
    ex = Experiment(cfg)
    result = ex.rerank(_provider(cfg, provider))
    click.echo(result.report_text(), nl=False)
    click.echo(f"reports: {ex.run_dir / ('rerank-' + result.provider)}")


@main.command("tune-alpha")
@click.option("--provider", default=None)
@click.pass_context
def cmd_tune_alpha(ctx, provider):
    """Print the validation alpha grid and alpha* for a provider."""
    cfg = _load(ctx)
    ex = Experiment(cfg)
    result = ex.rerank(_provider(cfg, provider))
    for a, v in sorted(result.grid.items()):
        click.echo(f"{a:.1f}\t{v:.6f}")
    click.echo(f"alpha* = {result.alpha:.1f}")


@main.command("ablations")
@click.pass_context
def cmd_ablations(ctx):
    """Train and evaluate all six cells; print the ablation table."""
    cfg = _load(ctx)
    ex = Experiment(cfg)
    result = ex.evaluate([s.name for s in ALL_SPECS], baselines=True)
    click.echo(result.report_text(), nl=False)
    s = result.superadditivity()
    click.echo(f"synergy {s.synergy:+.4f}")


@main.command("full-run")
@click.option("--rerank/--no-rerank", "do_rerank", default=False, help="Also run every configured provider.")
@click.pass_context
def cmd_full_run(ctx, do_rerank):
    """prepare -> build-graph -> train -> evaluate (-> rerank)."""
    cfg = _load(ctx)
    t0 = time.perf_counter()
    out = Path(cfg.output_dir)
    prep = prepare(cfg)
    write_prepare(prep, out)
    bundle = build_graph_stage(cfg, prep)
    write_graph(bundle, out)
    ex = Experiment(cfg, prep, bundle)
    result = ex.evaluate([s.name for s in ALL_SPECS], baselines=True)
    click.echo(result.report_text(), nl=False)
    if do_rerank:
        for p in cfg.rerank.providers:
            click.echo(ex.rerank(p).report_text(), nl=False)
    click.echo(f"reports: {ex.run_dir}  ({time.perf_counter() - t0:.0f}s)")


def run() -> None:  # console-script shim
    sys.exit(main(standalone_mode=True))


if __name__ == "__main__":
    run()
