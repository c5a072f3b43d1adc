"""``rt3`` command line.

Every subcommand accepts an optional JSON ``--config``; explicit flags
override the matching config keys before the configuration hash is taken,
so artifact headers always describe what actually ran.  Outputs of a
command are written together or not at all.

Exit codes: 0 ok, 2 configuration error, 3 infeasible constraint,
4 numeric divergence.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from . import __version__
from . import artifacts as art
from . import pipeline as pl
from .errors import EXIT_OK, ConfigError, Rt3Error
from .perf import DvfsTable, PerfModel
from .runtime import BatteryState, make_deployment, parse_thresholds, reconfiguration_scenarios, simulate
from .search import pareto, search

log = logging.getLogger("rt3")


# -- config plumbing ------------------------------------------------------------


def _raw_config(args) -> tuple[dict, Path | None]:
    if getattr(args, "demo", False):
        return json.loads(resources.files("rt3").joinpath("data/demo.json").read_text()), None
    if args.config:
        path = Path(args.config)
        return art.read_json(path), path.parent
    return {}, None


_NULL = object()  # override that clears a key


def _set(d: dict, dotted: str, value) -> None:
    if value is None:
        return
    if value is _NULL:
        value = None
    *head, last = dotted.split(".")
    for k in head:
        d = d.setdefault(k, {})
    d[last] = value


def _config(args, overrides: dict) -> pl.RunConfig:
    raw, base = _raw_config(args)
    raw = copy.deepcopy(raw)
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    for key, value in overrides.items():
        if key == "dvfs" and value is not None:
            value = str(Path(value).resolve())
        _set(raw, key, value)
    return pl.parse_config(raw, base)


def _levels(text: str | None) -> list[str] | None:
    return [s.strip() for s in text.split(",") if s.strip()] if text else None


def _alphas(text: str | None) -> list[float] | None:
    if text is None or text == "uniform":
        return None
    try:
        return [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"--alpha must be 'uniform' or comma-separated floats, got {text!r}") from exc


def _duration(text: str | None):
    return None if text is None else art.parse_duration(text) * 1e3  # config stores ms


# -- subcommands ----------------------------------------------------------------


def cmd_pretrain(args) -> None:
    cfg = _config(args, {"model.pretrain_epochs": args.epochs})
    model = pl.stage_pretrain(cfg)
    pl.commit_paths({Path(args.out): art.dumps_json(art.model_doc(model), cfg.header())})
    print(f"pretrained accuracy {model.meta['accuracy']:.4f} -> {args.out}")


def cmd_prune(args) -> None:
    if args.threshold is not None and args.percentile is not None:
        raise ConfigError("give either --threshold or --percentile, not both")
    over = {
        "prune.axis": args.axis,
        "prune.k": args.k,
        "prune.k_col": args.k_col,
        "prune.finetune_epochs": args.finetune_epochs,
    }
    if args.threshold is not None:
        over.update({"prune.threshold": args.threshold, "prune.percentile": _NULL})
    elif args.percentile is not None:
        over.update({"prune.percentile": args.percentile, "prune.threshold": _NULL})
    cfg = _config(args, over)
    model = art.load_model(args.model)
    backbone, results = pl.stage_prune(model, cfg.prune, cfg.seed)
    header = cfg.header()
    report = Path(args.report) if args.report else Path(args.out).with_name("sparsity.csv")
    pl.commit_paths({
        Path(args.out): art.dumps_json(art.model_doc(backbone), header),
        report: pl.sparsity_csv(header, results),
    })
    print(f"backbone -> {args.out}, sparsity report -> {report}")


def cmd_space(args) -> None:
    cfg = _config(args, {
        "dvfs": args.levels,
        "levels": _levels(args.use),
        "search.timing": _duration(args.T),
        "search.theta": args.theta,
        "search.m": args.m,
        "search.p_size": args.p_size,
    })
    backbone = art.load_model(args.backbone)
    space = pl.stage_space(backbone, cfg.table(), cfg.perf, cfg.search)
    pl.commit_paths({Path(args.out): art.dumps_json(pl.space_doc(space, cfg.search), cfg.header())})
    print(f"ladder {list(space.ladder.ratios)} with {len(space.candidates)} candidate sets -> {args.out}")


def cmd_search(args) -> None:
    cfg = _config(args, {
        "dvfs": args.dvfs,
        "levels": _levels(args.use),
        "search.timing": _duration(args.T),
        "search.budget": args.budget,
        "search.episodes": args.episodes,
        "search.K": args.K,
        "search.m": args.m,
        "search.theta": args.theta,
    })
    backbone = art.load_model(args.backbone)
    table = cfg.table()
    space = pl.stage_space(backbone, table, cfg.perf, cfg.search)
    result = search(space, cfg.search)
    header = cfg.header()
    config = result.best.evaluation.config
    chosen = space.deployed_sets(config)
    ids = pl.set_ids(space, config)
    dep = make_deployment(backbone, cfg.perf, table, chosen, ids, cfg.search.budget, cfg.search.timing)
    out = Path(args.out_dir)
    pl.commit_paths({
        out / "sets.json": art.dumps_json(pl.space_doc(space, cfg.search), header),
        out / "episodes.csv": pl.episodes_csv(header, result, space),
        out / "pareto.csv": pl.pareto_csv(header, result.frontier),
        out / "selected.json": art.dumps_json(pl.selected_doc(space, result, cfg.search, cfg.perf), header),
        out / "deployment.json": art.dumps_json(art.deployment_doc(dep), header),
    })
    print(f"best reward {result.best.reward:.6f} ({ids}); artifacts in {out}")


def cmd_train(args) -> None:
    cfg = _config(args, {
        "train.epochs": args.epochs,
        "train.lr": args.lr,
        "train.alphas": _alphas(args.alpha),
    })
    backbone = art.load_model(args.backbone)
    sets, doc = art.load_sets(args.sets)
    res = pl.stage_train(backbone, sets, cfg.train, cfg.seed)
    header = cfg.header()
    ids = doc.get("set_ids") or [f"s{i}@{s.sparsity:g}" for i, s in enumerate(sets)]
    levels = doc.get("levels")
    by_level = bool(levels) and isinstance(levels[0], dict) and len(levels) == len(sets)
    names = [l["name"] for l in levels] if by_level else list(ids)
    files = {
        Path(args.out): art.dumps_json(art.model_doc(res.model), header),
        Path(args.accuracy): pl.accuracy_csv(header, names, ids, res.accuracies),
    }
    if args.deploy_out:
        if not by_level or "perf" not in doc:
            raise ConfigError("--deploy-out needs a selected.json produced by 'rt3 search'")
        table = DvfsTable.from_dict({"levels": levels})
        dep = make_deployment(res.model, PerfModel(**doc["perf"]), table, sets, ids, float(doc["budget"]), float(doc["timing_ms"]) / 1e3)
        files[Path(args.deploy_out)] = art.dumps_json(art.deployment_doc(dep), header)
    pl.commit_paths(files)
    print("accuracies " + " ".join(f"{n}={a:.4f}" for n, a in zip(names, res.accuracies)))


def cmd_simulate(args) -> None:
    cfg = _config(args, {
        "simulate.battery": args.battery,
        "simulate.thresholds": args.thresholds,
        "simulate.bandwidth": args.bandwidth,
    })
    dep = art.load_deployment(args.deploy)
    timing = art.parse_duration(args.T) if args.T is not None else dep.timing
    thresholds = parse_thresholds(cfg.simulate.thresholds)
    if args.scenarios:
        runs = reconfiguration_scenarios(dep, thresholds)
    else:
        runs = {"deployment": (dep, thresholds)}
    reports = {}
    for name, (d, th) in runs.items():
        battery = BatteryState(d.budget, d.budget * cfg.simulate.battery, th)
        reports[name] = simulate(d, battery, timing=timing, bandwidth=cfg.simulate.bandwidth)
    header = cfg.header()
    main_report = reports.get("E3", reports.get("deployment"))
    doc = {**main_report.to_dict(), "verdict": main_report.verdict}
    if args.scenarios:
        doc["scenarios"] = {k: r.to_dict() for k, r in reports.items()}
    files = {
        Path(args.out): art.dumps_json(doc, header),
        Path(args.events): pl.events_csv(header, main_report),
    }
    pl.commit_paths(files)
    verdict = "met" if main_report.verdict else "MISSED"
    print(f"{main_report.total_runs} runs, {len(main_report.events)} switches, deadline {verdict}")


def cmd_pareto(args) -> None:
    rows = art.read_csv(args.episodes)
    points = []
    for r in rows:
        if r.get("a_w") not in (None, ""):
            points.append((float(r["a_w"]), int(r["runs"])))
    cfg = _config(args, {})
    front = pareto(points)
    pl.commit_paths({Path(args.out): pl.pareto_csv(cfg.header(), front)})
    print(f"{len(front)} non-dominated of {len(points)} trained points -> {args.out}")


def cmd_run(args) -> None:
    cfg = _config(args, {"dvfs": args.dvfs})
    res = pl.run_pipeline(cfg, args.out_dir)
    for name, r in res.reports.items():
        print(f"{name}: {r.total_runs} runs, max latency {r.max_latency * 1e3:.3f} ms, deadline {'met' if r.verdict else 'missed'}")
    print(f"{len(res.files)} artifacts in {args.out_dir}")


# -- parser -----------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="JSON run configuration; flags override its values")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rt3", description="Pattern-set pruning with DVFS-aware search and run-time reconfiguration.")
    parser.add_argument("--version", action="version", version=f"rt3 {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeat for debug)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("pretrain", help="train the dense toy model")
    _common(p)
    p.add_argument("--epochs", type=int, help="pretraining epochs")
    p.add_argument("--out", default="model.json", help="output model file (default: model.json)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("prune", help="block-structured pruning of a trained model")
    _common(p)
    p.add_argument("--model", required=True, help="input model JSON")
    p.add_argument("--axis", choices=["row", "col", "column", "both"], help="which lines to prune inside each block")
    p.add_argument("--k", type=int, help="number of row-wise block partitions")
    p.add_argument("--k-col", dest="k_col", type=int, help="number of column-wise block partitions")
    p.add_argument("--percentile", type=float, help="fraction of lines pruned per block")
    p.add_argument("--threshold", type=float, help="prune lines whose l2 norm is below this value")
    p.add_argument("--finetune-epochs", dest="finetune_epochs", type=int, help="masked fine-tuning epochs after pruning")
    p.add_argument("--out", default="backbone.json", help="output backbone file (default: backbone.json)")
    p.add_argument("--report", help="sparsity CSV (default: sparsity.csv next to --out)")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("space", help="build the sparsity ladder and candidate pattern sets")
    _common(p)
    p.add_argument("--backbone", required=True, help="pruned backbone JSON")
    p.add_argument("--levels", metavar="DVFS_JSON", help="DVFS table (default: bundled Cortex-A7 table)")
    p.add_argument("--use", metavar="L1,L2,...", help="level names to deploy (default: from config)")
    p.add_argument("--T", help="per-inference deadline, e.g. 100ms")
    p.add_argument("--theta", type=int, help="candidate ratios per level")
    p.add_argument("--m", type=int, help="patterns per candidate set")
    p.add_argument("--p-size", dest="p_size", type=int, help="pattern side length")
    p.add_argument("--out", default="sets.json", help="output file (default: sets.json)")
    p.set_defaults(func=cmd_space)

    p = sub.add_parser("search", help="REINFORCE search for one pattern set per level")
    _common(p)
    p.add_argument("--backbone", required=True, help="pruned backbone JSON")
    p.add_argument("--dvfs", help="DVFS table (default: bundled Cortex-A7 table)")
    p.add_argument("--use", metavar="L1,L2,...", help="level names to deploy (default: from config)")
    p.add_argument("--T", help="per-inference deadline, e.g. 100ms")
    p.add_argument("--budget", type=float, help="battery energy budget in joules")
    p.add_argument("--episodes", type=int, help="search episodes")
    p.add_argument("--K", type=int, help="pattern picks per level")
    p.add_argument("--m", type=int, help="patterns per candidate set")
    p.add_argument("--theta", type=int, help="candidate ratios per level")
    p.add_argument("--out-dir", dest="out_dir", default=".", help="directory for episodes.csv, pareto.csv, selected.json, deployment.json")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("train", help="joint training of the backbone under several pattern sets")
    _common(p)
    p.add_argument("--backbone", required=True, help="pruned backbone JSON")
    p.add_argument("--sets", required=True, help="pattern sets JSON (selected.json or sets.json)")
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--alpha", help="'uniform' or comma-separated loss weights summing to 1")
    p.add_argument("--out", default="trained.json", help="trained model file (default: trained.json)")
    p.add_argument("--accuracy", default="accuracy.csv", help="per-set accuracy CSV (default: accuracy.csv)")
    p.add_argument("--deploy-out", dest="deploy_out", help="also write a deployment bundle (needs selected.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="battery discharge with run-time reconfiguration")
    _common(p)
    p.add_argument("--deploy", required=True, help="deployment JSON from 'rt3 search' or 'rt3 train'")
    p.add_argument("--battery", type=float, help="initial charge as a fraction of the budget")
    p.add_argument("--thresholds", help="governor rules, e.g. 0.5:l4,0.2:l3")
    p.add_argument("--T", help="deadline for the verdict (default: the deployment's)")
    p.add_argument("--bandwidth", type=float, help="pattern-set transfer rate in bytes/s")
    p.add_argument("--scenarios", action="store_true", help="also run the no-reconfiguration and V/F-only baselines")
    p.add_argument("--out", default="report.json", help="report file (default: report.json)")
    p.add_argument("--events", default="events.csv", help="switch events CSV (default: events.csv)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pareto", help="recompute the Pareto frontier of a search log")
    _common(p)
    p.add_argument("--episodes", required=True, help="episodes.csv from 'rt3 search'")
    p.add_argument("--out", default="pareto.csv", help="output CSV (default: pareto.csv)")
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("run", help="whole pipeline from one config")
    _common(p)
    p.add_argument("--demo", action="store_true", help="use the bundled demo configuration")
    p.add_argument("--dvfs", help="DVFS table (overrides the config)")
    p.add_argument("--out-dir", dest="out_dir", default="rt3-out", help="artifact directory (default: rt3-out)")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except pl.StageError as exc:
        print(f"rt3 {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except Rt3Error as exc:
        print(f"rt3 {args.command}: stage '{args.command}' failed: {exc}", file=sys.stderr)
        return exc.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
