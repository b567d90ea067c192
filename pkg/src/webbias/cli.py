"""Command-line entry point: ``webbias <command> ...``.

Every command writes its outputs plus ``<command>.config.json``, an echo of
all resolved parameters. Passing that file back with ``--config`` reruns the
command identically; values in a config file take precedence over flags.
The default output directory comes from ``$WEBBIAS_OUTPUT_DIR`` (falling back
to ``./webbias-out``).

Exit codes: 0 success, 1 input error, 2 insufficient data.
"""

from __future__ import annotations

import functools
import json
import logging
import os
import sys
from collections import OrderedDict
from pathlib import Path

import click
import numpy as np

from webbias import bias, sampling
from webbias.clicks import CategoryMap, ClickTable, filter_news, load_news_list, read_click_log
from webbias.errors import InputFormatError, InsufficientDataError, WebBiasError
from webbias.graph import compute_pagerank, load_edge_list, rank_percentiles, read_pagerank_csv, write_pagerank_csv
from webbias.null_model import WalkerConfig, baseline_biases, build_traffic_graph, simulate_walkers
from webbias.scaling import fit_rank_distribution, fit_traffic_scaling, traffic_by_domain, write_binned_csv
from webbias.synth import SynthSpec, default_spec, write_dataset
from webbias.user_mix import DEFAULT_CORNERS, DEFAULT_HEX_SIZE, MIN_PER_CATEGORY, compute_mix, hexbin, \
    write_mix_csv, write_ternary_csv

logger = logging.getLogger("webbias")

EXIT_INPUT = 1
EXIT_INSUFFICIENT = 2


def _default_out() -> str:
    return os.environ.get("WEBBIAS_OUTPUT_DIR", "webbias-out")


def _require(path, what):
    if path is None:
        raise InputFormatError(f"missing required input: {what}")
    if not Path(path).exists():
        raise InputFormatError(f"{what} not found: {path}")
    return path


def command(fn):
    """Apply ``--config`` overrides, write the config echo and map errors to exit codes."""

    @click.option("--config", "config_file", type=click.Path(dir_okay=False), default=None,
                  help="JSON file of parameter values; these override flags.")
    @click.option("--threads", type=int, default=1, show_default=True,
                  help="Worker cap. Results never depend on it.")
    @click.option("--out", "out_dir", default=_default_out, show_default="$WEBBIAS_OUTPUT_DIR or webbias-out",
                  help="Output directory.")
    @click.pass_context
    @functools.wraps(fn)
    def wrapper(ctx, config_file, **params):
        try:
            if config_file:
                try:
                    overrides = json.loads(Path(config_file).read_text(encoding="utf-8"))
                except (OSError, json.JSONDecodeError) as exc:
                    raise InputFormatError(f"cannot read config {config_file}: {exc}") from exc
                for key, value in overrides.items():
                    key = key.replace("-", "_")
                    if key not in params:
                        raise InputFormatError(f"unknown config key {key!r} for {ctx.info_name}")
                    params[key] = value
            out = Path(params["out_dir"])
            out.mkdir(parents=True, exist_ok=True)
            echo = OrderedDict(sorted(params.items()))
            (out / f"{ctx.info_name}.config.json").write_text(json.dumps(echo, indent=2) + "\n", encoding="utf-8")
            return fn(**params)
        except InsufficientDataError as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(EXIT_INSUFFICIENT)
        except (WebBiasError, OSError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(EXIT_INPUT)

    return wrapper


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Measure homogeneity and popularity bias of Web platforms from click logs."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command("pagerank")
@click.option("--graph", "graph_path", help="Edge list, one 'source<TAB>target' per line.")
@click.option("--alpha", type=float, default=0.15, show_default=True, help="Teleportation factor.")
@click.option("--tolerance", type=float, default=1e-10, show_default=True, help="L1 convergence threshold.")
@click.option("--max-iterations", type=int, default=200, show_default=True)
@command
def cmd_pagerank(graph_path, alpha, tolerance, max_iterations, out_dir, threads):
    """Compute PageRank and percentiles of a domain graph -> pagerank.csv."""
    graph = load_edge_list(_require(graph_path, "graph edge list"))
    rep = graph.report
    logger.info("graph: %d domains, %d edges (%d lines, %d dropped)",
                graph.n_domains, graph.n_edges, rep.lines_read, rep.lines_dropped)
    pr = compute_pagerank(graph, alpha, tolerance, max_iterations)
    write_pagerank_csv(Path(out_dir) / "pagerank.csv", pr)
    if not pr.converged:
        click.echo(f"warning: PageRank not converged after {pr.iterations_used} iterations "
                   f"(residual {pr.residual:.3g})", err=True)


def _load_clicks(clicks_path, news_path) -> ClickTable:
    table = read_click_log(_require(clicks_path, "click log"))
    if news_path:
        table = filter_news(table, load_news_list(_require(news_path, "news list")))
    if len(table) == 0:
        raise InsufficientDataError("click log has no usable records")
    return table


def _category_map(path) -> CategoryMap:
    return CategoryMap.load(_require(path, "category map")) if path else CategoryMap.default()


def analysis_clicks(table: ClickTable, cmap: CategoryMap) -> ClickTable:
    """Clicks whose referrer belongs to a mapped application."""
    mapped = np.array([cmap.lookup(d) is not None for d in table.domains], dtype=bool)
    return table.select(mapped[table.referrer]) if len(table) else table


def _universe(table: ClickTable, cmap: CategoryMap, override) -> int:
    if override:
        return int(override)
    n = analysis_clicks(table, cmap).distinct_targets()
    if n < 2:
        raise InsufficientDataError(f"only {n} distinct target domain(s); |D| must be at least 2")
    return n


def _percentiles(pagerank_path, lorenz_mode):
    pr = read_pagerank_csv(_require(pagerank_path, "PageRank CSV"))
    return rank_percentiles(pr, lorenz_mode)


SAMPLING_OPTIONS = [
    click.option("--mode", type=click.Choice([sampling.FIXED_COUNT, sampling.TIME_WINDOW]),
                 default=sampling.FIXED_COUNT, show_default=True),
    click.option("--level", type=click.Choice(["app", "category", "both"]), default="both", show_default=True,
                 help="Sample per application, per pooled category, or both."),
    click.option("--clicks-per-pair", type=int, default=sampling.CLICKS_PER_PAIR, show_default=True),
    click.option("--users-per-app", type=int, default=sampling.USERS_PER_APP, show_default=True),
    click.option("--users-per-category", type=int, default=sampling.USERS_PER_CATEGORY, show_default=True),
    click.option("--min-clicks", type=int, default=None,
                 help="Eligibility threshold [default: clicks-per-pair, or 10 in time-window mode]."),
    click.option("--min-users", type=int, default=sampling.MIN_USERS_PER_APP, show_default=True,
                 help="Applications with fewer eligible users are excluded."),
    click.option("--window-start", type=int, default=None, help="Window start, epoch seconds (inclusive)."),
    click.option("--window-end", type=int, default=None, help="Window end, epoch seconds (exclusive)."),
]

BIAS_OPTIONS = [
    click.option("--pagerank", "pagerank_path", help="pagerank.csv from the pagerank command."),
    click.option("--clicks", "clicks_path", help="Click log TSV (optionally gzip)."),
    click.option("--categories", "categories_path", default=None, help="Category map JSON [default: built-in]."),
    click.option("--news", "news_path", default=None, help="Keep only clicks to domains in this list."),
    click.option("--universe-size", type=int, default=None,
                 help="|D| for homogeneity normalization [default: distinct targets in the analysed clicks]."),
    click.option("--lorenz-mode", type=click.Choice(["rank", "mass"]), default="rank", show_default=True,
                 help="Lorenz x-axis: PageRank rank percentile or cumulative PageRank mass."),
    click.option("--missing", type=click.Choice(["drop", "lowest"]), default="drop", show_default=True,
                 help="Targets without PageRank: drop them, or give them the lowest percentile."),
    click.option("--interpolation", type=click.Choice(["step", "linear"]), default="step", show_default=True),
    click.option("--seed", type=int, default=0, show_default=True),
]


def _apply(options):
    def deco(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn
    return deco


def _spec_for(level, mode, clicks_per_pair, users_per_app, users_per_category, min_clicks,
              min_users, window_start, window_end, seed) -> sampling.SampleSpec:
    if mode == sampling.FIXED_COUNT:
        users = users_per_category if level == "category" else users_per_app
        return sampling.SampleSpec.fixed_count(clicks_per_pair, users,
                                               clicks_per_pair if min_clicks is None else min_clicks,
                                               min_users, seed)
    if window_start is None or window_end is None:
        raise InputFormatError("time-window mode needs --window-start and --window-end")
    return sampling.SampleSpec.time_window(window_start, window_end,
                                           sampling.WINDOW_MIN_CLICKS if min_clicks is None else min_clicks,
                                           min_users, seed)


@cli.command("measure")
@_apply(BIAS_OPTIONS)
@_apply(SAMPLING_OPTIONS)
@click.option("--lorenz-json", is_flag=True, help="Also write every Lorenz curve to lorenz.json.")
@command
def cmd_measure(pagerank_path, clicks_path, categories_path, news_path, universe_size, lorenz_mode,
                missing, interpolation, seed, mode, level, clicks_per_pair, users_per_app,
                users_per_category, min_clicks, min_users, window_start, window_end, lorenz_json,
                out_dir, threads):
    """Sample clicks and score both biases per user and per application."""
    out = Path(out_dir)
    pct = _percentiles(pagerank_path, lorenz_mode)
    cmap = _category_map(categories_path)
    table = _load_clicks(clicks_path, news_path)
    n_universe = _universe(table, cmap, universe_size)
    levels = ["app", "category"] if level == "both" else [level]

    all_samples, all_scores, summaries, curves = [], [], [], []
    correlation = {"universe_size": n_universe, "lorenz_mode": lorenz_mode, "interpolation": interpolation}
    for lv in levels:
        store = sampling.ClickStore(table, cmap, lv)
        spec = _spec_for(lv, mode, clicks_per_pair, users_per_app, users_per_category, min_clicks,
                         min_users, window_start, window_end, seed)
        samples = sampling.draw_samples(store, spec)
        scores, skipped = bias.score_samples(samples, pct, n_universe, missing, interpolation)
        if skipped:
            click.echo(f"warning: {len(skipped)} {lv} samples had no target with known PageRank", err=True)
        kept = {(s.user, s.app) for s in scores}
        all_samples.extend(s for s in samples if (s.user, s.app) in kept)
        all_scores.extend(scores)
        lv_summaries = bias.aggregate_by_app(scores)
        summaries.extend(lv_summaries)
        if lorenz_json:
            curves.extend((s.user, s.app, bias.lorenz_curve(s, pct, missing, interpolation))
                          for s in samples if (s.user, s.app) in kept)
        if len(lv_summaries) >= 3:
            try:
                r, p = bias.correlate_biases(lv_summaries)
                correlation[lv] = {"pearson_r": r, "p_value": p, "n": len(lv_summaries)}
            except InsufficientDataError as exc:
                correlation[lv] = {"error": str(exc)}
    if not all_scores:
        raise InsufficientDataError("no application met the sampling thresholds")
    bias.write_scores_csv(out / "scores.csv", all_scores)
    bias.write_summaries_csv(out / "summaries.csv", summaries)
    sampling.write_manifest(out / "sample_manifest.csv", all_samples)
    (out / "correlation.json").write_text(json.dumps(correlation, indent=2, sort_keys=True) + "\n")
    if lorenz_json:
        bias.write_lorenz_json(out / "lorenz.json", curves, lorenz_mode)


@cli.command("baseline")
@_apply(BIAS_OPTIONS)
@click.option("--manifest", "manifest_path", help="sample_manifest.csv from the measure command.")
@click.option("--teleport", type=float, default=0.15, show_default=True, help="Walker teleport probability.")
@click.option("--burn-in", type=int, default=0, show_default=True)
@click.option("--restrict-category", is_flag=True,
              help="Walk only the traffic of each context's own category [default: global traffic graph].")
@command
def cmd_baseline(pagerank_path, clicks_path, categories_path, news_path, universe_size, lorenz_mode,
                 missing, interpolation, seed, manifest_path, teleport, burn_in, restrict_category,
                 out_dir, threads):
    """Random-walker baseline mirroring a measured sample -> baseline.csv."""
    pct = _percentiles(pagerank_path, lorenz_mode)
    cmap = _category_map(categories_path)
    table = _load_clicks(clicks_path, news_path)
    n_universe = _universe(table, cmap, universe_size)
    rows = sampling.read_manifest(_require(manifest_path, "sample manifest"))
    if not rows:
        raise InsufficientDataError("sample manifest is empty")
    contexts: dict[str, list[dict]] = {}
    for row in rows:
        contexts.setdefault(row["app"], []).append(row)

    global_graph = build_traffic_graph(table)
    cat_of_domain = [cmap.lookup(d) for d in table.domains]
    results = []
    for app, members in contexts.items():
        category = members[0]["category"] or None
        graph = global_graph
        if restrict_category and category:
            in_cat = np.array([h is not None and h[1] == category for h in cat_of_domain], dtype=bool)
            graph = build_traffic_graph(table.select(in_cat[table.referrer]))
        steps = [r["n_clicks"] for r in members]
        cfg = WalkerConfig(len(members), max(steps), teleport, seed, burn_in, f"baseline:{app}")
        walkers = simulate_walkers(graph, cfg, steps)
        res = baseline_biases(walkers, pct, n_universe, app, cfg, missing, interpolation)
        s = res.summary
        results.append(bias.AppBiasSummary(s.app, category, s.n_users, s.mean_b_h, s.se_b_h,
                                           s.mean_b_p, s.se_b_p, s.se_defined))
    bias.write_summaries_csv(Path(out_dir) / "baseline.csv", results)


@cli.command("scaling")
@click.option("--pagerank", "pagerank_path", help="pagerank.csv from the pagerank command.")
@click.option("--clicks", "clicks_path", help="Click log TSV (optionally gzip).")
@click.option("--news", "news_path", default=None, help="Keep only clicks to domains in this list.")
@click.option("--bins-per-decade", type=int, default=10, show_default=True)
@click.option("--min-bin-count", type=int, default=3, show_default=True)
@click.option("--x-min", type=float, default=None,
              help="Lower cutoff for the PageRank distribution fit; omitted -> no distribution fit.")
@command
def cmd_scaling(pagerank_path, clicks_path, news_path, bins_per_decade, min_bin_count, x_min,
                out_dir, threads):
    """Fit traffic ~ PageRank^gamma (and optionally the PageRank tail exponent)."""
    out = Path(out_dir)
    pr = read_pagerank_csv(_require(pagerank_path, "PageRank CSV"))
    table = _load_clicks(clicks_path, news_path)
    fit = fit_traffic_scaling(traffic_by_domain(table), pr, bins_per_decade, min_bin_count)
    report = {"traffic_scaling": fit.to_dict()}
    if x_min is not None:
        report["rank_distribution"] = fit_rank_distribution(pr, x_min).to_dict()
    (out / "scaling.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_binned_csv(out / "scaling_bins.csv", fit)


@cli.command("ternary")
@click.option("--pagerank", "pagerank_path", help="pagerank.csv from the pagerank command.")
@click.option("--clicks", "clicks_path", help="Click log TSV (optionally gzip).")
@click.option("--categories", "categories_path", default=None, help="Category map JSON [default: built-in].")
@click.option("--news", "news_path", default=None)
@click.option("--corners", default=",".join(DEFAULT_CORNERS), show_default=True,
              help="Three categories: bottom-left, bottom-right, top.")
@click.option("--min-per-category", type=int, default=MIN_PER_CATEGORY, show_default=True)
@click.option("--hex-size", type=float, default=DEFAULT_HEX_SIZE, show_default=True)
@click.option("--universe-size", type=int, default=None)
@click.option("--lorenz-mode", type=click.Choice(["rank", "mass"]), default="rank", show_default=True)
@click.option("--missing", type=click.Choice(["drop", "lowest"]), default="drop", show_default=True)
@command
def cmd_ternary(pagerank_path, clicks_path, categories_path, news_path, corners, min_per_category,
                hex_size, universe_size, lorenz_mode, missing, out_dir, threads):
    """Hexagonal ternary map of users by category mix -> ternary.csv."""
    out = Path(out_dir)
    cats = [c.strip() for c in (corners if isinstance(corners, str) else ",".join(corners)).split(",")]
    pct = _percentiles(pagerank_path, lorenz_mode)
    cmap = _category_map(categories_path)
    table = _load_clicks(clicks_path, news_path)
    n_universe = _universe(table, cmap, universe_size)
    store = sampling.ClickStore(table, cmap, "category")
    points = compute_mix(store, cats, pct, n_universe, min_per_category, missing)
    write_mix_csv(out / "user_mix.csv", points, cats)
    write_ternary_csv(out / "ternary.csv", hexbin(points, hex_size))


@cli.command("synth")
@click.option("--spec", "spec_path", default=None, help="SynthSpec JSON [default: small built-in demo].")
@click.option("--seed", type=int, default=0, show_default=True, help="Used only with the built-in spec.")
@command
def cmd_synth(spec_path, seed, out_dir, threads):
    """Generate a synthetic graph, click log, category map and news list."""
    if spec_path:
        spec = SynthSpec.from_dict(json.loads(Path(_require(spec_path, "synth spec")).read_text()))
    else:
        spec = default_spec(seed)
    write_dataset(spec, out_dir)


def main(argv=None):
    return cli.main(args=argv, prog_name="webbias")


if __name__ == "__main__":
    sys.exit(main())
