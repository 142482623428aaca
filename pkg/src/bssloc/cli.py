"""Command-line entry point.

Subcommands: ``evaluate`` (score one layout), ``optimize`` (run an
optimizer and emit trace + plots), ``ingest`` (GPS traces to network and
demand files), ``synth`` (generate synthetic traces), ``report`` (render an
existing trace/layout). Experiments are described by one INI-style config
file; every key is documented in the README. ``BSS_LOG`` sets the log
level. Exit codes: 0 success, 1 runtime failure, 2 input error.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import random
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

from . import analytic, ingest as ingest_mod, optimize as opt, svgplot
from .analytic import AnalyticEvaluator, load_station_params, write_per_station_csv, write_summary_csv
from .demand import ChoiceParams, load_demands, save_demands, uniform_grid_pmf
from .errors import InputError
from .network import admissible_sets, build_distance_matrix, load_network, save_network
from .optimize import LnsConfig, OptTrace, SaConfig, load_layout, save_layout
from .sim import SimConfig, SimEvaluator, simulate

logger = logging.getLogger("bssloc")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = os.environ.get("BSS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        logger.exception("command failed")
        print(f"failure: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bssloc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config file (INI)")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--jobs", type=int, default=1, help="max concurrent simulations")

    p_eval = sub.add_parser("evaluate", help="score one layout with the configured evaluator")
    common(p_eval)
    p_eval.add_argument("--layout", default=None, help="layout file (overrides config)")
    p_eval.set_defaults(func=cmd_evaluate)

    p_opt = sub.add_parser("optimize", help="run the configured optimizer")
    common(p_opt)
    p_opt.add_argument("--layout", default=None, help="initial layout file (overrides config)")
    p_opt.set_defaults(func=cmd_optimize)

    p_ing = sub.add_parser("ingest", help="build network and demand files from GPS traces")
    common(p_ing)
    p_ing.set_defaults(func=cmd_ingest)

    p_syn = sub.add_parser("synth", help="generate synthetic GPS traces")
    common(p_syn)
    p_syn.set_defaults(func=cmd_synth)

    p_rep = sub.add_parser("report", help="render plots from an existing trace/layout")
    p_rep.add_argument("--trace", required=True, help="optimizer trace CSV")
    p_rep.add_argument("--nodes", default=None, help="network nodes CSV (for the layout map)")
    p_rep.add_argument("--edges", default=None, help="network edges CSV")
    p_rep.add_argument("--layout", default=None, help="layout file to draw")
    p_rep.add_argument("--out", default=".", help="output directory")
    p_rep.set_defaults(func=cmd_report)
    return parser


def read_config(path: str) -> configparser.ConfigParser:
    p = Path(path)
    if not p.exists():
        raise InputError(f"config file not found: {p}")
    cfg = configparser.ConfigParser()
    try:
        cfg.read(p)
    except configparser.Error as exc:
        raise InputError(f"{p}: {exc}") from exc
    return cfg


def _cfg_get(cfg, section, key, cast=str, default=None, required=False):
    if not cfg.has_section(section) or not cfg.has_option(section, key) or cfg.get(section, key).strip() == "":
        if required:
            raise InputError(f"config missing [{section}] {key}")
        return default
    raw = cfg.get(section, key)
    try:
        if cast is bool:
            return cfg.getboolean(section, key)
        return cast(raw)
    except ValueError as exc:
        raise InputError(f"config [{section}] {key} = {raw!r}: {exc}") from exc


def _resolve(cfg_path: str, value: str) -> Path:
    p = Path(value)
    if not p.is_absolute():
        p = Path(cfg_path).parent / p
    return p


def _out_dir(args, cfg) -> Path:
    out = args.out or _cfg_get(cfg, "experiment", "out", default=".")
    out_path = Path(out)
    out_path.mkdir(parents=True, exist_ok=True)
    return out_path


def _choice_params(cfg) -> ChoiceParams:
    return ChoiceParams.from_km_hour_units(
        alpha1_per_km=_cfg_get(cfg, "choice", "alpha1_per_km", float, required=True),
        alpha2=_cfg_get(cfg, "choice", "alpha2", float, required=True),
        alpha3_per_hour=_cfg_get(cfg, "choice", "alpha3_per_hour", float, required=True),
        epsilon=_cfg_get(cfg, "choice", "epsilon", float, required=True),
    )


def build_evaluator(args, cfg, seed: int):
    """Wire network, demands, and parameters into the configured evaluator."""
    kind = _cfg_get(cfg, "experiment", "evaluator", required=True)
    if kind not in ("analytic", "sim"):
        raise InputError(f"unknown evaluator {kind!r} (expected analytic or sim)")
    nodes = _resolve(args.config, _cfg_get(cfg, "paths", "nodes", required=True))
    edges = _resolve(args.config, _cfg_get(cfg, "paths", "edges", required=True))
    demands_path = _resolve(args.config, _cfg_get(cfg, "paths", "demands", required=True))
    net = load_network(nodes, edges)
    dm = build_distance_matrix(net)
    demands = load_demands(demands_path)
    choice = _choice_params(cfg)
    n_stations = _cfg_get(cfg, "experiment", "n_stations", int, required=True)

    if kind == "sim":
        sim_path = _resolve(args.config, _cfg_get(cfg, "paths", "sim", required=True))
        sim_cfg = SimConfig.from_file(sim_path)
        if seed is not None:
            from dataclasses import replace

            sim_cfg = replace(sim_cfg, seed=seed)
        return SimEvaluator(demands, net, dm, choice, sim_cfg), net, n_stations

    stations_path = _resolve(args.config, _cfg_get(cfg, "paths", "stations", required=True))
    station_params = load_station_params(stations_path)
    d_max_km = _cfg_get(cfg, "analytic", "d_max_km", float, required=True)
    consumption = _cfg_get(cfg, "analytic", "consumption_kwh_per_km", float, required=True)
    fixed_point = _cfg_get(cfg, "analytic", "fixed_point", bool, default=False)
    levels = sorted({b for d in demands for b in d.battery_pmf})
    sets = admissible_sets(net, dm, demands, d_max_km * 1000.0, consumption / 1000.0, levels)
    evaluator = AnalyticEvaluator(
        demands, sets, dm, choice, station_params, net.candidates, fixed_point=fixed_point, net=net
    )
    return evaluator, net, n_stations


def _seed(args, cfg) -> int:
    if args.seed is not None:
        return args.seed
    return _cfg_get(cfg, "experiment", "seed", int, default=0)


def cmd_evaluate(args) -> int:
    cfg = read_config(args.config)
    out = _out_dir(args, cfg)
    seed = _seed(args, cfg)
    evaluator, net, n_stations = build_evaluator(args, cfg, seed)

    layout_arg = args.layout or _cfg_get(cfg, "paths", "layout", required=True)
    layout = load_layout(_resolve(args.config, layout_arg))
    evaluator.n_stations = n_stations
    result = evaluator.evaluate(layout, seed=seed)

    write_summary_csv(result, out / "summary.csv")
    write_per_station_csv(result, out / "per_station.csv")
    print(f"eta_lost = {result.eta_lost:.4f}")
    return 0


def _make_pool_map(jobs: int):
    if jobs <= 1:
        return None, None
    executor = ProcessPoolExecutor(max_workers=jobs)
    return executor.map, executor


def cmd_optimize(args) -> int:
    cfg = read_config(args.config)
    out = _out_dir(args, cfg)
    seed = _seed(args, cfg)
    evaluator, net, n_stations = build_evaluator(args, cfg, seed)
    optimizer = _cfg_get(cfg, "experiment", "optimizer", required=True)
    if optimizer not in ("lns-bo", "sa", "enum"):
        raise InputError(f"unknown optimizer {optimizer!r} (expected lns-bo, sa, or enum)")

    layout_arg = args.layout or _cfg_get(cfg, "paths", "layout")
    if layout_arg:
        initial = load_layout(_resolve(args.config, layout_arg))
        if len(initial) != n_stations:
            raise InputError(
                f"initial layout must contain exactly {n_stations} stations "
                f"(station-count constraint), got {len(initial)}"
            )
    else:
        rng = random.Random(seed)
        initial = frozenset(rng.sample(sorted(evaluator.candidates), n_stations))

    pool_map, executor = _make_pool_map(args.jobs)
    trace = OptTrace()
    result = None
    try:
        if optimizer == "lns-bo":
            lns_cfg = LnsConfig(
                k_destroy=_cfg_get(cfg, "lns", "k_destroy", int, default=1),
                n_init=_cfg_get(cfg, "lns", "n_init", int, default=3),
                m_batch=_cfg_get(cfg, "lns", "m_batch", int, default=2),
                n_sample=_cfg_get(cfg, "lns", "n_sample", int, default=2),
                seed=seed,
                max_evals=_cfg_get(cfg, "lns", "max_evals", int),
                max_outer_iters=_cfg_get(cfg, "lns", "max_outer_iters", int),
                time_budget_s=_cfg_get(cfg, "lns", "time_budget_s", float),
            )
            result = opt.lns_bo(initial, evaluator, lns_cfg, net=net, pool_map=pool_map, trace=trace)
        elif optimizer == "sa":
            sa_cfg = SaConfig(
                seed=seed,
                t_init=_cfg_get(cfg, "sa", "t_init", float),
                cooling_ratio=_cfg_get(cfg, "sa", "cooling_ratio", float, default=0.95),
                moves_per_temp=_cfg_get(cfg, "sa", "moves_per_temp", int, default=1),
                max_evals=_cfg_get(cfg, "sa", "max_evals", int),
                time_budget_s=_cfg_get(cfg, "sa", "time_budget_s", float),
            )
            result = opt.simulated_annealing(initial, evaluator, sa_cfg, pool_map=pool_map, trace=trace)
        else:
            result = opt.enumerate_exact(
                evaluator.candidates,
                n_stations,
                evaluator,
                run_seed=seed,
                cap=_cfg_get(cfg, "enum", "cap", int, default=100_000),
                pool_map=pool_map,
                trace=trace,
            )
    except Exception:
        # flush whatever trace exists so a failed run is still inspectable
        trace.write_csv(out / "trace.csv")
        raise
    finally:
        if executor is not None:
            executor.shutdown()

    result.trace.write_csv(out / "trace.csv")
    save_layout(result.best_layout, out / "best_layout.txt")
    rows = result.trace.rows
    svgplot.line_plot(
        [("best", [r.elapsed_s for r in rows], [r.best_obj for r in rows])],
        out / "convergence.svg",
        x_label="elapsed seconds",
        y_label="demand loss fraction",
        title=f"{optimizer} convergence",
    )
    svgplot.layout_map(net, result.best_layout, out / "layout.svg", title="best layout")
    print(f"best eta_lost = {result.best_obj:.4f} layout = {sorted(result.best_layout)} evals = {result.evals}")
    return 0


def cmd_synth(args) -> int:
    cfg = read_config(args.config)
    out = _out_dir(args, cfg)
    seed = args.seed if args.seed is not None else _cfg_get(cfg, "synth", "seed", int, default=0)
    scenario = _parse_scenario(cfg)
    records = ingest_mod.synth_traces(scenario, seed=seed, bbox=_parse_bbox(cfg))
    ingest_mod.save_gps_csv(records, out / "gps.csv")
    print(f"wrote {len(records)} records to {out / 'gps.csv'}")
    return 0


def _parse_scenario(cfg) -> ingest_mod.SynthScenario:
    hotspots_raw = _cfg_get(cfg, "synth", "hotspots", required=True)
    flows_raw = _cfg_get(cfg, "synth", "flows", required=True)
    try:
        hotspots = [
            (float(lon), float(lat))
            for lon, lat in (h.split(",") for h in hotspots_raw.split(";") if h.strip())
        ]
        flows = []
        for chunk in flows_raw.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            pair, _, rate = chunk.partition(":")
            o, _, d = pair.partition("-")
            flows.append((int(o), int(d), float(rate)))
    except ValueError as exc:
        raise InputError(f"bad [synth] hotspots/flows: {exc}") from exc
    return ingest_mod.SynthScenario(
        hotspots=hotspots,
        flows=flows,
        duration_h=_cfg_get(cfg, "synth", "duration_h", float, default=24.0),
        sample_period_s=_cfg_get(cfg, "synth", "sample_period_s", float, default=60.0),
        speed_mps=_cfg_get(cfg, "synth", "speed_mps", float, default=10.0),
        jitter_m=_cfg_get(cfg, "synth", "jitter_m", float, default=150.0),
    )


def _parse_bbox(cfg):
    raw = _cfg_get(cfg, "ingest", "bbox")
    if raw is None:
        return ingest_mod.DEFAULT_BBOX
    try:
        parts = tuple(float(x) for x in raw.split(","))
    except ValueError as exc:
        raise InputError(f"bad [ingest] bbox: {exc}") from exc
    if len(parts) != 4:
        raise InputError("[ingest] bbox needs four comma-separated values")
    return parts


def cmd_ingest(args) -> int:
    cfg = read_config(args.config)
    out = _out_dir(args, cfg)
    seed = _seed(args, cfg)
    gps_path = _resolve(args.config, _cfg_get(cfg, "paths", "gps", required=True))
    bbox = _parse_bbox(cfg)
    cell_size = _cfg_get(cfg, "ingest", "cell_size_m", float, default=1000.0)
    k_clusters = _cfg_get(cfg, "ingest", "k_clusters", int, default=50)
    min_occ = _cfg_get(cfg, "ingest", "min_occurrences", int, default=1)
    occupied = _cfg_get(cfg, "ingest", "occupied_status", int, default=1)
    grid_raw = _cfg_get(cfg, "ingest", "battery_grid", default="5,100,5")
    try:
        low, high, step = (float(x) for x in grid_raw.split(","))
    except ValueError as exc:
        raise InputError(f"bad [ingest] battery_grid: {exc}") from exc
    pmf = uniform_grid_pmf(low, high, step)

    rows = ingest_mod.load_gps_csv(gps_path)
    cleaned, report = ingest_mod.clean(rows, bbox=bbox)
    if not cleaned:
        raise InputError("no records survive cleaning")
    proj = ingest_mod.Projection(bbox)
    trips = ingest_mod.extract_trips(cleaned, occupied_status=occupied)
    gridded = ingest_mod.grid_demands(trips, cell_size, proj, min_occurrences=min_occ)
    net = ingest_mod.extract_network(cleaned, k_clusters, proj, seed=seed)
    demands = ingest_mod.demands_from_grid(gridded, net, proj, cell_size, pmf)
    if not demands:
        raise InputError("no demands survive gridding")

    save_network(net, out / "nodes.csv", out / "edges.csv")
    save_demands(demands, out / "demands.csv")
    pass_rate = ingest_mod.write_fit_report(gridded, out / "fit_report.csv")
    with open(out / "filter_report.txt", "w") as f:
        f.write(report.summary())
        f.write(f"trips extracted:    {len(trips)}\n")
        f.write(f"gridded demands:    {len(gridded)}\n")
        f.write(f"network demands:    {len(demands)}\n")
        f.write(f"exponential-fit pass rate: {pass_rate:.4f}\n")
    print(f"wrote network ({len(net.nodes)} nodes), {len(demands)} demands, pass rate {pass_rate:.3f}")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace_path = Path(args.trace)
    if not trace_path.exists():
        raise InputError(f"trace file not found: {trace_path}")
    trace = OptTrace.read_csv(trace_path)
    if not trace.rows:
        raise InputError(f"{trace_path}: empty trace")
    rows = trace.rows
    svgplot.line_plot(
        [("best", [r.elapsed_s for r in rows], [r.best_obj for r in rows])],
        out / "convergence.svg",
        x_label="elapsed seconds",
        y_label="demand loss fraction",
        title="convergence",
    )
    lines = [
        f"rows:        {len(rows)}",
        f"evals:       {rows[-1].evals}",
        f"initial obj: {rows[0].best_obj:.6f}",
        f"best obj:    {rows[-1].best_obj:.6f}",
        f"best layout: {' '.join(str(j) for j in rows[-1].layout)}",
    ]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    if args.nodes and args.edges:
        net = load_network(args.nodes, args.edges)
        layout = load_layout(args.layout) if args.layout else frozenset(rows[-1].layout)
        svgplot.layout_map(net, layout, out / "layout.svg", title="layout")
    print((out / "summary.txt").read_text(), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
