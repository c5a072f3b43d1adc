"""End-to-end orchestration: pretrain -> prune -> space -> search -> train -> simulate.

Each stage returns its artifacts as in-memory text keyed by file name.
:func:`run_pipeline` writes them only after every stage succeeded, so a
failing run leaves no partial output behind.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from . import artifacts as art
from .errors import ConfigError, Rt3Error
from .model import DatasetSpec, ToyModel, init_toy_model, make_dataset
from .patterns import ModelPatternSet
from .perf import DvfsTable, PerfModel, load_dvfs
from .pruning import BpConfig, bp_prune_model, sparsity_report
from .runtime import BatteryState, Deployment, make_deployment, parse_thresholds, reconfiguration_scenarios, simulate
from .search import SearchConfig, SearchResult, SearchSpace, build_space, search
from .trainer import JointTrainConfig, JointTrainResult, evaluate_accuracy, joint_train

log = logging.getLogger(__name__)


@dataclass
class ModelSection:
    sizes: list[int] = field(default_factory=lambda: [16, 32, 4])
    pretrain_epochs: int = 30
    lr: float = 0.1
    batch_size: int = 32


@dataclass
class PruneSection:
    axis: str = "column"
    k: int = 4
    k_col: int = 1
    threshold: float | None = None
    percentile: float | None = 0.25
    finetune_epochs: int = 10
    finetune_lr: float = 0.05

    def bp_config(self) -> BpConfig:
        return BpConfig(self.axis, self.k, self.k_col, self.threshold, self.percentile)


@dataclass
class TrainSection:
    epochs: int = 30
    lr: float = 0.05
    batch_size: int = 32
    alphas: list[float] | None = None


@dataclass
class SimulateSection:
    battery: float = 1.0
    thresholds: str = "0.5:l4,0.2:l3"
    bandwidth: float = 10_000.0


@dataclass
class RunConfig:
    seed: int = 0
    dvfs: str | None = None
    levels: list[str] = field(default_factory=lambda: ["l3", "l4", "l6"])
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSection = field(default_factory=ModelSection)
    prune: PruneSection = field(default_factory=PruneSection)
    perf: PerfModel = field(default_factory=PerfModel)
    search: SearchConfig = field(default_factory=SearchConfig)
    train: TrainSection = field(default_factory=TrainSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    raw: dict = field(default_factory=dict, repr=False)

    def table(self) -> DvfsTable:
        return load_dvfs(self.dvfs).subset(self.levels)

    def header(self) -> dict:
        return art.make_header(self.raw, self.seed)


def _section(cls, data: dict | None, name: str, **overrides):
    data = dict(data or {})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    data.update(overrides)
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError, Rt3Error) as exc:
        raise ConfigError(f"bad [{name}] section: {exc}") from exc


def parse_config(d: dict, base_dir: Path | None = None) -> RunConfig:
    top = {"seed", "dvfs", "levels", "dataset", "model", "prune", "perf", "search", "train", "simulate"}
    unknown = set(d) - top
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    seed = int(d.get("seed", 0))
    dvfs = d.get("dvfs")
    if dvfs is not None:
        p = Path(dvfs)
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        if not p.is_file():
            raise ConfigError(f"DVFS table not found: {p}")
        dvfs = str(p)
    s = dict(d.get("search") or {})
    if "timing" in s:
        s["timing"] = art.parse_duration(s["timing"])
    for key in ("alphas", "fractions"):
        if s.get(key) is not None:
            s[key] = tuple(s[key])
    ds_seed = (d.get("dataset") or {}).get("seed", seed)
    cfg = RunConfig(
        seed=seed,
        dvfs=dvfs,
        levels=list(d.get("levels", ["l3", "l4", "l6"])),
        dataset=_section(DatasetSpec, d.get("dataset"), "dataset", seed=ds_seed),
        model=_section(ModelSection, d.get("model"), "model"),
        prune=_section(PruneSection, d.get("prune"), "prune"),
        perf=_section(PerfModel, d.get("perf"), "perf"),
        search=_section(SearchConfig, s, "search", seed=seed),
        train=_section(TrainSection, d.get("train"), "train"),
        simulate=_section(SimulateSection, d.get("simulate"), "simulate"),
        raw=d,
    )
    try:
        cfg.prune.bp_config()  # validate early
    except Rt3Error as exc:
        raise ConfigError(f"bad [prune] section: {exc}") from exc
    cfg.table()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    return parse_config(art.read_json(path), path.parent)


def demo_config() -> RunConfig:
    return parse_config(json.loads(resources.files("rt3").joinpath("data/demo.json").read_text()))


# -- stages -------------------------------------------------------------------


def stage_pretrain(cfg: RunConfig) -> ToyModel:
    data = make_dataset(cfg.dataset)
    model = init_toy_model(cfg.model.sizes, seed=cfg.seed, dataset=cfg.dataset)
    res = joint_train(model, [None], data, JointTrainConfig(cfg.model.pretrain_epochs, cfg.model.lr, cfg.model.batch_size, cfg.seed))
    res.model.meta = {"accuracy": res.accuracies[0]}
    return res.model


def stage_prune(model: ToyModel, section: PruneSection, seed: int = 0):
    backbone, results = bp_prune_model(model, section.bp_config())
    if section.finetune_epochs and model.dataset is not None:
        data = make_dataset(model.dataset)
        backbone = joint_train(backbone, [None], data, JointTrainConfig(section.finetune_epochs, section.finetune_lr, seed=seed)).model
    if model.dataset is not None:
        data = make_dataset(model.dataset)
        backbone.meta = {"accuracy": evaluate_accuracy(backbone, None, data.x_holdout, data.y_holdout)}
    return backbone, results


def stage_space(backbone: ToyModel, table: DvfsTable, perf: PerfModel, scfg: SearchConfig) -> SearchSpace:
    if backbone.dataset is None:
        raise ConfigError("backbone file carries no dataset description")
    return build_space(backbone, make_dataset(backbone.dataset), table, perf, scfg)


def stage_train(backbone: ToyModel, sets: list[ModelPatternSet], section: TrainSection, seed: int) -> JointTrainResult:
    if backbone.dataset is None:
        raise ConfigError("backbone file carries no dataset description")
    alphas = tuple(section.alphas) if section.alphas else None
    return joint_train(backbone, sets, make_dataset(backbone.dataset), JointTrainConfig(section.epochs, section.lr, section.batch_size, seed, alphas))


def simulate_scenarios(dep: Deployment, section: SimulateSection) -> dict:
    thresholds = parse_thresholds(section.thresholds)
    reports = {}
    for name, (d, th) in reconfiguration_scenarios(dep, thresholds).items():
        battery = BatteryState(dep.budget, dep.budget * section.battery, th)
        reports[name] = simulate(d, battery, bandwidth=section.bandwidth)
    return reports


# -- artifact rendering ----------------------------------------------------------


def sparsity_csv(header, results) -> str:
    return art.dumps_csv(header, ["layer", "blocks", "sparsity"], sparsity_report(results))


def space_doc(space: SearchSpace, scfg: SearchConfig) -> dict:
    return art.sets_doc(
        space.candidates,
        timing_ms=scfg.timing * 1e3,
        levels=[l.name for l in space.table],
        ladder=list(space.ladder.ratios),
        p_size=scfg.p_size,
        m=scfg.m,
    )


def episodes_csv(header, result: SearchResult, space: SearchSpace) -> str:
    names = [l.name for l in space.table]
    fields = ["episode", "actions", "config"]
    fields += [f"sparsity_{n}" for n in names] + [f"lat_{n}_ms" for n in names]
    fields += ["runs", "r_runs"] + [f"acc_{n}" for n in names] + ["a_w", "cond", "reward"]
    rows = []
    for e in result.log:
        ev = e.evaluation
        row = {
            "episode": e.episode,
            "actions": " ".join(map(str, e.actions)),
            "config": ";".join(f"{c}:{'/'.join(map(str, p))}" for c, p in ev.config),
            "runs": ev.runs,
            "r_runs": ev.r_runs,
            "a_w": "" if ev.a_w is None else ev.a_w,
            "cond": "" if ev.cond is None else int(ev.cond),
            "reward": ev.reward,
        }
        for i, n in enumerate(names):
            row[f"sparsity_{n}"] = ev.sparsities[i]
            row[f"lat_{n}_ms"] = ev.latencies[i] * 1e3
            row[f"acc_{n}"] = "" if ev.accuracies is None else ev.accuracies[i]
        rows.append(row)
    return art.dumps_csv(header, fields, rows)


def pareto_csv(header, frontier) -> str:
    return art.dumps_csv(header, ["a_w", "runs"], [{"a_w": a, "runs": r} for a, r in frontier])


def set_ids(space: SearchSpace, config) -> list[str]:
    return [f"c{c}[{','.join(map(str, p))}]@{space.candidates[c].sparsity:g}" for c, p in config]


def selected_doc(space: SearchSpace, result: SearchResult, scfg: SearchConfig, perf: PerfModel) -> dict:
    config = result.best.evaluation.config
    return art.sets_doc(
        space.deployed_sets(config),
        levels=[{"name": l.name, "freq_mhz": l.freq_mhz, "voltage_mv": l.voltage_mv} for l in space.table],
        set_ids=set_ids(space, config),
        budget=scfg.budget,
        timing_ms=scfg.timing * 1e3,
        perf=dataclasses.asdict(perf),
        reward=result.best.reward,
    )


def accuracy_csv(header, level_names, set_ids_, accs) -> str:
    rows = [{"level": n, "set": s, "accuracy": a} for n, s, a in zip(level_names, set_ids_, accs)]
    return art.dumps_csv(header, ["level", "set", "accuracy"], rows)


def events_csv(header, report) -> str:
    fields = ["at_inference", "from_level", "to_level", "from_set", "to_set", "bytes_moved", "duration_ms"]
    rows = [
        {**{k: getattr(e, k) for k in fields[:-1]}, "duration_ms": e.duration_s * 1e3}
        for e in report.events
    ]
    return art.dumps_csv(header, fields, rows)


def scenarios_csv(header, reports) -> str:
    rows = [
        {"scenario": k, "total_runs": r.total_runs, "max_latency_ms": r.max_latency * 1e3, "constraint_met": int(r.verdict), "switches": len(r.events)}
        for k, r in reports.items()
    ]
    return art.dumps_csv(header, ["scenario", "total_runs", "max_latency_ms", "constraint_met", "switches"], rows)


# -- driver ------------------------------------------------------------------------


class StageError(Rt3Error):
    def __init__(self, stage: str, err: Rt3Error):
        super().__init__(f"stage '{stage}' failed: {err}")
        self.stage = stage
        self.exit_code = err.exit_code


@dataclass
class PipelineResult:
    files: dict[str, str]
    search: SearchResult
    trained: JointTrainResult
    deployment: Deployment
    reports: dict[str, Any]


def build_pipeline(cfg: RunConfig) -> PipelineResult:
    """Run every stage in memory and render all artifacts."""
    header = cfg.header()
    files: dict[str, str] = {}
    stage = "config"
    try:
        table = cfg.table()
        stage = "pretrain"
        model = stage_pretrain(cfg)
        files["model.json"] = art.dumps_json(art.model_doc(model), header)

        stage = "prune"
        backbone, bp_results = stage_prune(model, cfg.prune, cfg.seed)
        files["backbone.json"] = art.dumps_json(art.model_doc(backbone), header)
        files["sparsity.csv"] = sparsity_csv(header, bp_results)

        stage = "space"
        space = stage_space(backbone, table, cfg.perf, cfg.search)
        files["sets.json"] = art.dumps_json(space_doc(space, cfg.search), header)

        stage = "search"
        result = search(space, cfg.search)
        files["episodes.csv"] = episodes_csv(header, result, space)
        files["pareto.csv"] = pareto_csv(header, result.frontier)
        files["selected.json"] = art.dumps_json(selected_doc(space, result, cfg.search, cfg.perf), header)
        chosen = space.deployed_sets(result.best.evaluation.config)
        ids = set_ids(space, result.best.evaluation.config)
        search_dep = make_deployment(backbone, cfg.perf, table, chosen, ids, cfg.search.budget, cfg.search.timing)
        files["deployment.json"] = art.dumps_json(art.deployment_doc(search_dep), header)

        stage = "train"
        trained = stage_train(backbone, chosen, cfg.train, cfg.seed)
        files["trained.json"] = art.dumps_json(art.model_doc(trained.model), header)
        files["accuracy.csv"] = accuracy_csv(header, [l.name for l in table], ids, trained.accuracies)
        final = make_deployment(trained.model, cfg.perf, table, chosen, ids, cfg.search.budget, cfg.search.timing)
        files["deployment_final.json"] = art.dumps_json(art.deployment_doc(final), header)

        stage = "simulate"
        reports = simulate_scenarios(final, cfg.simulate)
        files["report.json"] = art.dumps_json({"scenarios": {k: r.to_dict() for k, r in reports.items()}}, header)
        files["events.csv"] = events_csv(header, reports["E3"])
        files["scenarios.csv"] = scenarios_csv(header, reports)
    except StageError:
        raise
    except Rt3Error as exc:
        raise StageError(stage, exc) from exc
    return PipelineResult(files, result, trained, final, reports)


def commit_paths(files: dict[Path, str]) -> list[Path]:
    """Write every ``path -> text`` pair, or nothing if any write fails.

    Each file is written next to its destination under a temporary name and
    renamed into place once all of them are on disk.
    """
    staged: list[tuple[Path, Path]] = []
    umask = os.umask(0)
    os.umask(umask)
    try:
        for dest, text in files.items():
            dest = Path(dest)
            dest.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=f".{dest.name}.", dir=dest.parent)
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
            os.chmod(tmp, 0o666 & ~umask)  # mkstemp creates 0600 files
            staged.append((Path(tmp), dest))
    except OSError:
        for tmp, _ in staged:
            tmp.unlink(missing_ok=True)
        raise
    for tmp, dest in staged:
        os.replace(tmp, dest)
    return [dest for _, dest in staged]


def commit(files: dict[str, str], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    return commit_paths({out_dir / name: text for name, text in files.items()})


def run_pipeline(cfg: RunConfig, out_dir: str | Path) -> PipelineResult:
    result = build_pipeline(cfg)
    commit(result.files, out_dir)
    return result
