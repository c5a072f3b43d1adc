"""Reading and writing pipeline artifacts (JSON + CSV).

Every artifact starts with a header recording the tool version, a hash of
the producing configuration and the seed.  No timestamps are written, so a
rerun with the same configuration reproduces files byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import re
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .errors import ConfigError
from .model import ToyModel
from .patterns import ModelPatternSet
from .perf import PerfModel, VFLevel
from .runtime import Deployment, LevelDeployment, assignment_from_json, assignment_to_json, make_level


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def make_header(config, seed) -> dict:
    return {"tool": "rt3", "version": __version__, "config_hash": config_hash(config), "seed": seed}


def dumps_json(obj, header: dict) -> str:
    return json.dumps({"header": header, **obj}, indent=1, sort_keys=False) + "\n"


def write_json(path: str | Path, obj: dict, header: dict) -> None:
    Path(path).write_text(dumps_json(obj, header))


def read_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def dumps_csv(header: dict, fieldnames: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    buf.write(f"# rt3 {header['version']} config_hash={header['config_hash']} seed={header['seed']}\n")
    w = csv.DictWriter(buf, fieldnames=list(fieldnames), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _cell(v) for k, v in row.items()})
    return buf.getvalue()


def write_csv(path: str | Path, header: dict, fieldnames: Sequence[str], rows: Iterable[dict]) -> None:
    Path(path).write_text(dumps_csv(header, fieldnames, rows))


def read_csv(path: str | Path) -> list[dict]:
    try:
        lines = [l for l in Path(path).read_text().splitlines() if not l.startswith("#")]
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return list(csv.DictReader(lines))


_DURATION = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(ms|s|us)?\s*$")


def parse_duration(text: str | float) -> float:
    """Seconds from ``'100ms'``, ``'0.1s'`` or a bare number of milliseconds."""
    if isinstance(text, (int, float)):
        return float(text) / 1e3
    m = _DURATION.match(str(text))
    if not m:
        raise ConfigError(f"cannot parse duration {text!r}")
    value, unit = float(m.group(1)), m.group(2) or "ms"
    return value * {"s": 1.0, "ms": 1e-3, "us": 1e-6}[unit]


# -- model -------------------------------------------------------------------


def load_model(path) -> ToyModel:
    d = read_json(path)
    try:
        return ToyModel.from_dict(d["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path} is not a model file: {exc}") from exc


def model_doc(model: ToyModel) -> dict:
    return {"model": model.to_dict()}


# -- pattern sets -------------------------------------------------------------


def sets_doc(sets: Sequence[ModelPatternSet], **extra) -> dict:
    return {**extra, "sets": [s.to_dict() for s in sets]}


def load_sets(path) -> tuple[list[ModelPatternSet], dict]:
    d = read_json(path)
    try:
        return [ModelPatternSet.from_dict(s) for s in d["sets"]], d
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path} is not a pattern-set file: {exc}") from exc


# -- deployment ------------------------------------------------------------------


def deployment_doc(dep: Deployment) -> dict:
    levels = sorted(dep.levels.values(), key=lambda d: d.level.freq_mhz)
    return {
        "budget": dep.budget,
        "timing_ms": dep.timing * 1e3,
        "perf": {
            "base_cycles": dep.perf.base_cycles,
            "overhead": dep.perf.overhead,
            "energy_coeff": dep.perf.energy_coeff,
            "tile": dep.perf.tile,
        },
        "levels": [
            {
                "name": d.level.name,
                "freq_mhz": d.level.freq_mhz,
                "voltage_mv": d.level.voltage_mv,
                "set_id": d.set_id,
                "sparsity": d.pattern_set.sparsity if d.pattern_set else 0.0,
                "latency_ms": d.latency * 1e3,
                "energy_per_run": d.energy,
                "pattern_set": d.pattern_set.to_dict() if d.pattern_set else None,
                "assignment": assignment_to_json(d.assignment),
            }
            for d in levels
        ],
        "backbone": dep.backbone.to_dict(),
    }


def load_deployment(path) -> Deployment:
    d = read_json(path)
    try:
        backbone = ToyModel.from_dict(d["backbone"])
        perf = PerfModel(**d["perf"])
        levels: dict[str, LevelDeployment] = {}
        for ld in d["levels"]:
            level = VFLevel(ld["name"], float(ld["freq_mhz"]), float(ld["voltage_mv"]))
            mps = ModelPatternSet.from_dict(ld["pattern_set"]) if ld.get("pattern_set") else None
            assignment = assignment_from_json(ld["assignment"]) if mps else None
            levels[level.name] = make_level(backbone, perf, level, mps, ld["set_id"], assignment)
        return Deployment(backbone, perf, levels, float(d["budget"]), float(d["timing_ms"]) / 1e3)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path} is not a deployment file: {exc}") from exc
