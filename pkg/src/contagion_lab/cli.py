"""Command-line pipeline: one entry point per processing stage.

Exit codes: 0 success, 1 usage error, 2 data or parse error, 3 numeric
non-convergence. Every successful run writes a manifest (config echo,
package versions, input and output paths, no timestamps) next to its
first output, so identical invocations produce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np
import scipy

from . import __version__
from .calibrate import (
    AdoptionLog,
    MechanismParams,
    assign_from_pools,
    calibrate_activity,
    calibrate_background,
    calibrate_thresholds,
    calibrate_transmission,
)
from .cascade import (
    dedup_events,
    events_to_log,
    mechanism_counts,
    read_events,
    run_ensemble,
    run_realization,
    write_events,
)
from .errors import ConvergenceError, DataError, ParseError
from .features import extract_features_log, read_feature_csv, write_feature_csv
from .matchlab import (
    CovariateTable,
    Dose,
    PlaceboFuture,
    PlaceboPermuted,
    Timing,
    TreatmentPanel,
    build_panel,
    diagnostics,
    fit_propensity,
    match_all_days,
    naive_risk_table,
    pool_risk_ratio,
    write_pairs,
)
from .mechclass import (
    BoostedForest,
    decompose,
    macro_f1_score,
    predict_label,
    predict_proba,
    train,
)
from .netgraph import DirectedGraph, load_edge_list, save_id_map
from .shocks import AdoptionSeries, ShockSchedule, detect_shocks, fit_power_law, shock_day_mask
from .structtest import DEGREE_KINDS, degree_order_test
from .synthgen import SynthConfig, gen_graph, gen_traits

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CONVERGENCE = 3

COMMANDS = (
    "ingest",
    "simulate",
    "calibrate",
    "features",
    "train",
    "classify",
    "decompose",
    "degree-order-test",
    "detect-shocks",
    "fit-shock",
    "match",
    "synth",
    "report",
)


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage failures exit 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str):
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def resolve_threads(flag_value) -> int:
    """CONTAGION_LAB_THREADS beats the flag; the flag beats cpu_count."""
    env = os.environ.get("CONTAGION_LAB_THREADS")
    if env is not None and env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            raise DataError(f"CONTAGION_LAB_THREADS must be an integer, got {env!r}")
    if flag_value is not None:
        return max(1, int(flag_value))
    return os.cpu_count() or 1


def _jsonable(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, tuple):
        return list(value)
    return value


def _write_manifest(args, inputs, outputs, summary) -> str:
    config = {
        k: _jsonable(v)
        for k, v in sorted(vars(args).items())
        if k not in ("command", "config") and not k.startswith("_")
    }
    manifest = {
        "command": args.command,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "summary": summary,
        "versions": {
            "contagion-lab": __version__,
            "numpy": np.__version__,
            "python": "%d.%d.%d" % sys.version_info[:3],
            "scipy": scipy.__version__,
        },
    }
    path = f"{outputs[0]}.manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _require(sp, args, *names):
    for name in names:
        if getattr(args, name) is None:
            sp.error(f"--{name.replace('_', '-')} is required")


def _info(args, message):
    if getattr(args, "verbose", False):
        print(message, file=sys.stderr)


def _load_schedule(path) -> ShockSchedule:
    return ShockSchedule.from_json(path) if path else ShockSchedule.empty()


def _write_json(payload, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------- stages

def cmd_ingest(args, sp):
    _require(sp, args, "edges", "out")
    g = load_edge_list(args.edges)
    g.save(args.out)
    outputs = [args.out]
    if args.id_map:
        save_id_map(g, args.id_map)
        outputs.append(args.id_map)
    rep = g.load_report
    summary = {
        "nodes": g.node_count,
        "edges": g.edge_count,
        "records": rep.records if rep else None,
        "duplicates": rep.duplicates if rep else None,
        "self_loops": rep.self_loops if rep else None,
    }
    return [args.edges], outputs, summary


def cmd_synth(args, sp):
    _require(sp, args, "nodes", "out")
    cfg = SynthConfig(
        n_nodes=args.nodes,
        mean_degree=args.mean_degree,
        exponent=args.exponent,
        homophily=args.homophily,
        trait_balance=args.trait_balance,
        seed=args.seed,
    )
    trait = gen_traits(cfg)
    g = gen_graph(cfg, trait)
    g.save(args.out)
    outputs = [args.out]
    if args.traits:
        with open(args.traits, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "trait"])
            for i in range(g.node_count):
                w.writerow([g.node_ids[i], int(trait[i])])
        outputs.append(args.traits)
    return [], outputs, {"nodes": g.node_count, "edges": g.edge_count}


def _params_for_simulate(args, g) -> MechanismParams:
    if args.params:
        params = MechanismParams.from_json(args.params)
        if params.n_nodes != g.node_count:
            raise DataError(
                f"params cover {params.n_nodes} nodes but the graph has {g.node_count}"
            )
        return params
    n = g.node_count
    return MechanismParams(
        beta=np.full(n, args.beta),
        phi=np.full(n, args.phi),
        r=args.r,
        activity=np.full(n, args.activity),
        shock_schedule=_load_schedule(args.shocks),
        shock_prob_at_peak=args.shock_prob,
    )


def cmd_simulate(args, sp):
    _require(sp, args, "graph", "out")
    g = DirectedGraph.load(args.graph)
    params = _params_for_simulate(args, g)
    n_jobs = resolve_threads(args.threads)
    _info(args, f"running {args.realizations} realizations on {n_jobs} workers")
    result = run_ensemble(
        g,
        params,
        n_realizations=args.realizations,
        seed0=args.seed,
        stop_fraction=args.stop_fraction,
        horizon_days=args.horizon,
        seeds=args.seed_nodes,
        n_jobs=n_jobs,
    )
    events = result.events
    write_events(events, args.out)
    outputs = [args.out]
    inputs = [args.graph] + ([args.params] if args.params else [])
    if args.log_out:
        # dedup may drop realization-0 events, so replay that run in full
        first = run_realization(
            g,
            params,
            args.seed,
            stop_fraction=args.stop_fraction,
            horizon_days=args.horizon,
            seeds=args.seed_nodes,
            realization_id=0,
        )
        events_to_log(first, g.node_count, last_day=args.horizon - 1).to_csv(
            args.log_out, g
        )
        outputs.append(args.log_out)
    summary = {
        "realizations": args.realizations,
        "events": len(events),
        "mechanisms": mechanism_counts(events),
    }
    return inputs, outputs, summary


def cmd_calibrate(args, sp):
    _require(sp, args, "graph", "log", "out")
    g = DirectedGraph.load(args.graph)
    log = AdoptionLog.from_csv(args.log, g, first_day=args.first_day, last_day=args.last_day)
    inputs = [args.graph, args.log]
    if args.shock_ranges:
        with open(args.shock_ranges) as fh:
            ranges = [tuple(r) for r in json.load(fh)["ranges"]]
        mask = shock_day_mask(log.horizon_days, ranges)
        log = AdoptionLog(log.adoption_day, log.first_day, log.last_day, shock_mask=mask)
        inputs.append(args.shock_ranges)
    beta = calibrate_transmission(g, log)
    phi = calibrate_thresholds(g, log)
    r = calibrate_background(g, log)
    if args.activity_posts:
        counts = np.zeros(g.node_count)
        with open(args.activity_posts, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:2]] != ["node", "count"]:
                raise ParseError("expected header 'node,count'", path=args.activity_posts)
            for ln, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    counts[g.index_of(row[0].strip())] = float(row[1])
                except (KeyError, ValueError, IndexError):
                    raise ParseError(
                        f"bad posting record {row!r}", path=args.activity_posts, line=ln
                    ) from None
        activity = calibrate_activity(counts, args.activity_mean)
        inputs.append(args.activity_posts)
    else:
        activity = np.full(g.node_count, args.activity_mean)
    payload = {
        "beta": {"values": [float(x) for x in beta.values], **beta.summary()},
        "phi": {"values": [float(x) for x in phi.values], **phi.summary()},
        "r": r,
        "activity_mean": float(np.mean(activity)),
    }
    _write_json(payload, args.out)
    outputs = [args.out]
    if args.params_out:
        schedule = _load_schedule(args.shocks)
        if args.shocks:
            inputs.append(args.shocks)
        params = assign_from_pools(
            g.node_count,
            beta.values,
            phi.values,
            r,
            activity,
            shock_schedule=schedule,
            shock_prob_at_peak=args.shock_prob,
            seed=args.seed,
        )
        params.to_json(args.params_out)
        outputs.append(args.params_out)
    summary = {
        "beta_n": beta.n,
        "beta_mean": beta.mean,
        "phi_n": phi.n,
        "phi_mean": phi.mean,
        "r": r,
    }
    return inputs, outputs, summary


def cmd_features(args, sp):
    _require(sp, args, "graph", "log", "out")
    g = DirectedGraph.load(args.graph)
    log = AdoptionLog.from_csv(args.log, g, first_day=args.first_day, last_day=args.last_day)
    schedule = _load_schedule(args.shocks)
    nodes, X = extract_features_log(g, log, schedule)
    write_feature_csv(X, args.out)
    inputs = [args.graph, args.log] + ([args.shocks] if args.shocks else [])
    return inputs, [args.out], {"rows": int(len(nodes))}


def cmd_train(args, sp):
    _require(sp, args, "out")
    if bool(args.events) == bool(args.features):
        sp.error("exactly one of --events or --features is required")
    if args.events:
        events = read_events(args.events)
        if not args.no_dedup:
            events = dedup_events(events)
        from .features import events_feature_matrix

        X, y = events_feature_matrix(events)
        inputs = [args.events]
    else:
        X, y = read_feature_csv(args.features)
        if y is None:
            raise DataError("training features must include a label column")
        inputs = [args.features]
    result = train(
        X,
        y,
        learning_rate=args.learning_rate,
        max_depth=args.depth,
        n_rounds=args.rounds,
        min_child_weight=args.min_child_weight,
        reg_lambda=args.reg_lambda,
        max_bins=args.max_bins,
        test_fraction=args.test_fraction,
        seed=args.seed,
    )
    result.model.save(args.out)
    outputs = [args.out]
    metrics = {
        "macro_f1": result.macro_f1,
        "per_class": result.per_class,
        "n_train": result.n_train,
        "n_test": result.n_test,
        "final_loss": result.model.loss_curve[-1] if result.model.loss_curve else None,
    }
    if args.metrics_out:
        _write_json(metrics, args.metrics_out)
        outputs.append(args.metrics_out)
    print(f"held-out macro-F1 {result.macro_f1:.4f} ({result.n_test} test rows)")
    summary = {"macro_f1": result.macro_f1, "n_train": result.n_train, "n_test": result.n_test}
    return inputs, outputs, summary


def cmd_classify(args, sp):
    _require(sp, args, "model", "features", "out")
    model = BoostedForest.load(args.model)
    X, labels = read_feature_csv(args.features)
    probs = predict_proba(model, X)
    pred = predict_label(model, X)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "label"] + [f"p_{c}" for c in model.classes])
        for i in range(len(pred)):
            w.writerow([i, pred[i]] + [repr(float(p)) for p in probs[i]])
    summary = {
        "rows": int(len(pred)),
        "predicted": {c: int(np.sum(pred == c)) for c in model.classes},
    }
    if labels is not None:
        summary["macro_f1"] = macro_f1_score(labels, pred, model.classes)
    return [args.model, args.features], [args.out], summary


def cmd_decompose(args, sp):
    _require(sp, args, "model", "graph", "log", "out")
    model = BoostedForest.load(args.model)
    g = DirectedGraph.load(args.graph)
    log = AdoptionLog.from_csv(args.log, g, first_day=args.first_day, last_day=args.last_day)
    schedule = _load_schedule(args.shocks)
    report = decompose(model, log, g, schedule)
    report.to_json(args.out)
    inputs = [args.model, args.graph, args.log] + ([args.shocks] if args.shocks else [])
    return inputs, [args.out], {"shares": report.overall_shares()}


def cmd_degree_order_test(args, sp):
    _require(sp, args, "graph", "log", "out")
    g = DirectedGraph.load(args.graph)
    log = AdoptionLog.from_csv(args.log, g, first_day=args.first_day, last_day=args.last_day)
    result = degree_order_test(g, log, degree_kind=args.degree)
    _write_json(result.to_dict(), args.out)
    return [args.graph, args.log], [args.out], result.to_dict()


def cmd_detect_shocks(args, sp):
    _require(sp, args, "series", "out")
    series = AdoptionSeries.from_csv(args.series)
    ranges = detect_shocks(
        series, min_count=args.min_count, window=args.window, z=args.z
    )
    _write_json({"ranges": [[int(a), int(b)] for a, b in ranges]}, args.out)
    return [args.series], [args.out], {"n_ranges": len(ranges)}


def cmd_fit_shock(args, sp):
    _require(sp, args, "series", "peaks", "out")
    series = AdoptionSeries.from_csv(args.series)
    counts = series.counts
    taus = sorted(args.peaks)
    fits = []
    for i, tau in enumerate(taus):
        end = taus[i + 1] if i + 1 < len(taus) else len(counts)
        fit = fit_power_law(counts[:end], peak=tau, min_points=args.min_points)
        fits.append(fit)
    schedule = ShockSchedule.from_peaks(
        taus, [counts[t] for t in taus], [f.alpha for f in fits]
    )
    schedule.to_json(args.out)
    outputs = [args.out]
    fit_payload = [
        {
            "tau": int(tau),
            "alpha": f.alpha,
            "gamma": f.gamma,
            "r_squared": f.r_squared,
            "iterations": f.iterations,
            "n_points": f.n_points,
        }
        for tau, f in zip(taus, fits)
    ]
    if args.fits_out:
        _write_json(fit_payload, args.fits_out)
        outputs.append(args.fits_out)
    return [args.series], outputs, {"bursts": len(taus)}


def cmd_match(args, sp):
    _require(sp, args, "graph", "log", "out_pairs", "out_risk")
    if args.kind == "timing" and args.d is None:
        sp.error("--d is required for --kind timing")
    g = DirectedGraph.load(args.graph)
    log = AdoptionLog.from_csv(args.log, g, first_day=args.first_day, last_day=args.last_day)
    base = (
        Timing(d=args.d, direction=args.direction)
        if args.kind == "timing"
        else Dose(direction=args.direction)
    )
    if args.placebo == "future":
        if args.kind != "timing":
            sp.error("--placebo future requires --kind timing")
        kind = PlaceboFuture(d=args.d, direction=args.direction)
    elif args.placebo == "permute":
        kind = PlaceboPermuted(base, seed=args.seed)
    else:
        kind = base
    cov = CovariateTable(g, log, lag=args.lag)
    panel = build_panel(g, log, cov, kind)
    if args.level not in panel.levels:
        sp.error(f"--level must be one of {','.join(panel.levels)}")
    level = panel.levels.index(args.level)
    if level == 0:
        sp.error("--level 0 is the control group")
    model = fit_propensity(panel, min_level_rows=args.min_level_rows)
    run = match_all_days(
        panel,
        model,
        caliper_mult=args.caliper,
        level=level,
        shortlist=args.shortlist,
    )
    write_pairs(run.pairs, args.out_pairs)
    table = pool_risk_ratio(run.pairs)
    table.to_json(args.out_risk)
    outputs = [args.out_pairs, args.out_risk]
    if args.out_diagnostics:
        _write_json(diagnostics(panel, model, run, level=level), args.out_diagnostics)
        outputs.append(args.out_diagnostics)
    summary = {
        "kind": panel.kind_label,
        "level": args.level,
        "panel_rows": panel.n_rows,
        "n_pairs": len(run.pairs),
        "n_days_skipped": len(run.skipped),
        "rr": table.rr,
        "ci": [table.ci_low, table.ci_high],
        "naive_rr": naive_risk_table(panel, level=level).rr,
    }
    return [args.graph, args.log], outputs, summary


def cmd_report(args, sp):
    _require(sp, args, "dir", "out")
    if not os.path.isdir(args.dir):
        raise DataError(f"not a directory: {args.dir}")
    runs = []
    missing = []
    for name in sorted(os.listdir(args.dir)):
        if not name.endswith(".manifest.json"):
            continue
        mpath = os.path.join(args.dir, name)
        with open(mpath, encoding="utf-8") as fh:
            manifest = json.load(fh)
        checked = []
        for out in manifest.get("outputs", []):
            cand = out if os.path.isabs(out) else os.path.join(args.dir, os.path.basename(out))
            path = out if os.path.exists(out) else cand
            ok = os.path.exists(path) and os.path.getsize(path) > 0
            checked.append({"path": out, "ok": ok})
            if not ok:
                missing.append(out)
        runs.append(
            {
                "manifest": name,
                "command": manifest.get("command"),
                "summary": manifest.get("summary"),
                "outputs": checked,
            }
        )
    _write_json({"runs": runs, "missing": missing}, args.out)
    if missing:
        print(f"warning: {len(missing)} referenced outputs missing or empty", file=sys.stderr)
    return [args.dir], [args.out], {"n_runs": len(runs), "n_missing": len(missing)}


HANDLERS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "features": cmd_features,
    "train": cmd_train,
    "classify": cmd_classify,
    "decompose": cmd_decompose,
    "degree-order-test": cmd_degree_order_test,
    "detect-shocks": cmd_detect_shocks,
    "fit-shock": cmd_fit_shock,
    "match": cmd_match,
    "report": cmd_report,
}


# --------------------------------------------------------------------- parser

def _common(sp):
    sp.add_argument("--config", help="flat JSON file of flag defaults; flags win")
    sp.add_argument("--verbose", action="store_true", help="progress messages on stderr")


def _log_window(sp):
    sp.add_argument("--first-day", type=int, default=0)
    sp.add_argument("--last-day", type=int, default=None)


def build_parser():
    parser = _Parser(prog="contagion-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"contagion-lab {__version__}")
    subs = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    registry = {}

    sp = registry["ingest"] = subs.add_parser("ingest", help="edge CSV to graph cache")
    sp.add_argument("--edges", help="edge list CSV with header source,target")
    sp.add_argument("--out", help="graph cache (.npz)")
    sp.add_argument("--id-map", help="optional node id map CSV")
    _common(sp)

    sp = registry["synth"] = subs.add_parser("synth", help="generate a synthetic graph")
    sp.add_argument("--nodes", type=int)
    sp.add_argument("--mean-degree", type=float, default=5.0)
    sp.add_argument("--exponent", type=float, default=2.5)
    sp.add_argument("--homophily", type=float, default=0.0)
    sp.add_argument("--trait-balance", type=float, default=0.5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="graph cache (.npz)")
    sp.add_argument("--traits", help="optional trait CSV")
    _common(sp)

    sp = registry["simulate"] = subs.add_parser("simulate", help="run cascade realizations")
    sp.add_argument("--graph")
    sp.add_argument("--params", help="mechanism parameter JSON; overrides inline values")
    sp.add_argument("--beta", type=float, default=0.089)
    sp.add_argument("--phi", type=float, default=0.146)
    sp.add_argument("--r", type=float, default=60e-6)
    sp.add_argument("--activity", type=float, default=0.032)
    sp.add_argument("--shocks", help="shock schedule JSON")
    sp.add_argument("--shock-prob", type=float, default=0.0)
    sp.add_argument("--realizations", type=int, default=100)
    sp.add_argument("--stop-fraction", type=float, default=0.18)
    sp.add_argument("--horizon", type=int, default=730)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--seed-nodes", type=int, default=1)
    sp.add_argument("--threads", type=int, default=None)
    sp.add_argument("--out", help="events JSONL")
    sp.add_argument("--log-out", help="adoption log CSV of realization 0")
    _common(sp)

    sp = registry["calibrate"] = subs.add_parser("calibrate", help="fit pools from a log")
    sp.add_argument("--graph")
    sp.add_argument("--log", help="adoption log CSV")
    sp.add_argument("--shock-ranges", help="detect-shocks output JSON to mask")
    sp.add_argument("--activity-posts", help="per-node posting CSV (node,count)")
    sp.add_argument("--activity-mean", type=float, default=0.032)
    sp.add_argument("--out", help="calibration JSON")
    sp.add_argument("--params-out", help="optional per-node parameter JSON")
    sp.add_argument("--shocks", help="shock schedule JSON for the parameter file")
    sp.add_argument("--shock-prob", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    _log_window(sp)
    _common(sp)

    sp = registry["features"] = subs.add_parser("features", help="egocentric feature matrix")
    sp.add_argument("--graph")
    sp.add_argument("--log")
    sp.add_argument("--shocks")
    sp.add_argument("--out", help="feature CSV")
    _log_window(sp)
    _common(sp)

    sp = registry["train"] = subs.add_parser("train", help="fit the mechanism classifier")
    sp.add_argument("--events", help="events JSONL from simulate")
    sp.add_argument("--features", help="labeled feature CSV")
    sp.add_argument("--no-dedup", action="store_true", help="skip event deduplication")
    sp.add_argument("--rounds", type=int, default=300)
    sp.add_argument("--depth", type=int, default=6)
    sp.add_argument("--learning-rate", type=float, default=0.1)
    sp.add_argument("--min-child-weight", type=float, default=1.0)
    sp.add_argument("--reg-lambda", type=float, default=1.0)
    sp.add_argument("--max-bins", type=int, default=256)
    sp.add_argument("--test-fraction", type=float, default=0.2)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="model JSON")
    sp.add_argument("--metrics-out", help="held-out metrics JSON")
    _common(sp)

    sp = registry["classify"] = subs.add_parser("classify", help="label feature rows")
    sp.add_argument("--model")
    sp.add_argument("--features")
    sp.add_argument("--out", help="prediction CSV")
    _common(sp)

    sp = registry["decompose"] = subs.add_parser("decompose", help="mechanism mix of a log")
    sp.add_argument("--model")
    sp.add_argument("--graph")
    sp.add_argument("--log")
    sp.add_argument("--shocks")
    sp.add_argument("--out", help="decomposition JSON")
    _log_window(sp)
    _common(sp)

    sp = registry["degree-order-test"] = subs.add_parser(
        "degree-order-test", help="degree vs adoption-order rank correlation"
    )
    sp.add_argument("--graph")
    sp.add_argument("--log")
    sp.add_argument("--degree", choices=DEGREE_KINDS, default="in")
    sp.add_argument("--out", help="result JSON")
    _log_window(sp)
    _common(sp)

    sp = registry["detect-shocks"] = subs.add_parser(
        "detect-shocks", help="flag burst days in a daily count series"
    )
    sp.add_argument("--series", help="CSV with header day,count")
    sp.add_argument("--min-count", type=int, default=150)
    sp.add_argument("--window", type=int, default=30)
    sp.add_argument("--z", type=float, default=3.0)
    sp.add_argument("--out", help="ranges JSON")
    _common(sp)

    sp = registry["fit-shock"] = subs.add_parser(
        "fit-shock", help="fit decay exponents at given peaks"
    )
    sp.add_argument("--series", help="CSV with header day,count")
    sp.add_argument("--peaks", type=_int_list, help="comma-separated peak days")
    sp.add_argument("--min-points", type=int, default=3)
    sp.add_argument("--out", help="shock schedule JSON")
    sp.add_argument("--fits-out", help="per-burst fit diagnostics JSON")
    _common(sp)

    sp = registry["match"] = subs.add_parser("match", help="matched-sample risk ratios")
    sp.add_argument("--graph")
    sp.add_argument("--log")
    sp.add_argument("--kind", choices=("timing", "dose"), default="timing")
    sp.add_argument("--d", type=int, help="timing window length in days (1..6)")
    sp.add_argument("--direction", choices=("followee", "follower", "mutual"),
                    default="followee")
    sp.add_argument("--placebo", choices=("none", "future", "permute"), default="none")
    sp.add_argument("--lag", type=int, default=7, help="covariate measurement lag")
    sp.add_argument("--caliper", type=float, default=0.1)
    sp.add_argument("--level", default="1", help="treatment level to estimate")
    sp.add_argument("--min-level-rows", type=int, default=20)
    sp.add_argument("--shortlist", type=int, default=None,
                    help="nearest-neighbor candidate cap (default: exact search)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-pairs", help="matched pairs CSV")
    sp.add_argument("--out-risk", help="pooled risk table JSON")
    sp.add_argument("--out-diagnostics", help="balance diagnostics JSON")
    _log_window(sp)
    _common(sp)

    sp = registry["report"] = subs.add_parser("report", help="audit manifests in a directory")
    sp.add_argument("--dir", help="directory containing *.manifest.json files")
    sp.add_argument("--out", help="report JSON")
    _common(sp)

    return parser, registry


def _apply_config(sp, path):
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as e:
        raise ParseError(f"bad config file: {e}", path=str(path))
    if not isinstance(cfg, dict):
        raise ParseError("config file must hold a flat JSON object", path=str(path))
    actions = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in actions:
            sp.error(f"unknown config key: {key}")
        action = actions[dest]
        if action.type is not None and isinstance(value, str):
            value = action.type(value)
        defaults[dest] = value
    sp.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, registry = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            print("contagion-lab: error: a subcommand is required", file=sys.stderr)
            return EXIT_USAGE
        if getattr(args, "config", None):
            _apply_config(registry[args.command], args.config)
            args = parser.parse_args(argv)
        sp = registry[args.command]
        inputs, outputs, summary = HANDLERS[args.command](args, sp)
        if outputs:
            _write_manifest(args, inputs, outputs, summary)
        return EXIT_OK
    except SystemExit as e:
        return 0 if e.code is None else int(e.code)
    except (DataError, ParseError) as e:
        print(f"contagion-lab: error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ConvergenceError as e:
        print(f"contagion-lab: error: {e}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as e:
        print(f"contagion-lab: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
