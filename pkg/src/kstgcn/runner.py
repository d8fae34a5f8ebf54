"""Experiment orchestration: scenario -> CKG -> embedding -> training cells.

Each stage writes into ``<out>/cache/<stage>-<hash>/`` where the hash covers
the stage's inputs and its config subtree, so sweeps share scenarios and
embeddings and reruns skip finished work.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from statistics import median

import numpy as np

from .graph import propagation_matrix
from .kg.embed import (KnowledgeVectors, KrearConfig, extract_knowledge_vectors, load_table, save_table,
                       train_krear)
from .kg.store import build_ckg, load_store, save_store
from .metrics import COLUMNS, MetricReport, evaluate
from .model import ForecastModel, ModelConfig
from .synth import (CityScenario, EffectConfig, NoiseSpec, ScenarioParams, generate_scenario, load_scenario,
                    perturb, save_scenario)
from .trainer import ForecastData, TrainConfig, evaluate_split, historical_average, train, write_history

log = logging.getLogger(__name__)

MODES = ("ablate", "horizon", "noise", "hparam", "baselines")
RESULT_COLUMNS = ("mode", "cell", "x", "seed") + COLUMNS
SUMMARY_COLUMNS = ("mode", "cell", "x", "n_seeds") + COLUMNS
PLOT_COLUMNS = ("x", "metric", "value", "seed")
KNOWLEDGE = {"none": (False, False), "static": (True, False), "dynamic": (False, True), "both": (True, True)}


class ConfigError(ValueError):
    pass


@dataclass
class KgOptions:
    include_adj2: bool = False
    link_sections: bool = True


@dataclass
class Grids:
    horizons: list[int] = field(default_factory=lambda: [1, 2, 3, 4])
    hidden: list[int] = field(default_factory=lambda: [18, 32, 64, 128, 256])
    embed_dims: list[int] = field(default_factory=lambda: [5, 10, 15, 20, 30])
    gaussian: list[float] = field(default_factory=lambda: [0.2, 0.4, 0.6, 0.8, 1.0, 2.0])
    poisson: list[float] = field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0, 16.0])

    def validate(self) -> None:
        for f in fields(self):
            if not getattr(self, f.name):
                raise ConfigError(f"grid {f.name!r} is empty")


@dataclass
class ExperimentConfig:
    scenario: ScenarioParams = field(default_factory=ScenarioParams)
    scenario_path: str | None = None
    kg: KgOptions = field(default_factory=KgOptions)
    embed: KrearConfig = field(default_factory=KrearConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    mode: str = "ablate"
    grids: Grids = field(default_factory=Grids)
    seeds: list[int] = field(default_factory=lambda: [0])
    noise_targets: bool = False      # also perturb the training/validation labels
    out: str = "runs"
    jobs: int = 1

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if self.jobs < 1:
            raise ConfigError("jobs must be positive")
        self.grids.validate()
        if self.scenario_path is not None and not Path(self.scenario_path).is_dir():
            raise ConfigError(f"scenario directory {self.scenario_path} does not exist")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        out = cls()
        if "scenario" in d:
            out.scenario = ScenarioParams.from_dict(d.pop("scenario"))
        for key, typ in (("kg", KgOptions), ("model", ModelConfig), ("train", TrainConfig), ("grids", Grids)):
            if key in d:
                setattr(out, key, _build(typ, d.pop(key)))
        if "embed" in d:
            e = dict(d.pop("embed"))
            if "exclude_attributes" in e:
                e["exclude_attributes"] = tuple(e["exclude_attributes"])
            out.embed = _build(KrearConfig, e)
        for k, v in d.items():
            setattr(out, k, v)
        return out

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None


def _build(typ, d):
    try:
        return typ(**d)
    except TypeError as exc:
        raise ConfigError(f"{typ.__name__}: {exc}") from None


def fingerprint(*parts) -> str:
    """Short content hash of JSON-serializable parts."""
    blob = json.dumps(parts, sort_keys=True, default=_jsonable).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _jsonable(o):
    if isinstance(o, (tuple, set)):
        return list(o)
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    raise TypeError(type(o))


# -- cells -------------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    mode: str
    label: str        # e.g. "knowledge=static", "horizon=2"
    x: str            # plot abscissa
    knowledge: str = "both"
    model: str = "kstgcn"        # kstgcn | ha | gru_only | gcn_gru
    horizon: int | None = None
    d_h: int | None = None
    dim: int | None = None
    noise: str | None = None     # "gaussian:0.2" etc


def cells_for(cfg: ExperimentConfig) -> list[Cell]:
    g = cfg.grids
    if cfg.mode == "ablate":
        return [Cell("ablate", f"knowledge={k}", k, knowledge=k) for k in KNOWLEDGE]
    if cfg.mode == "horizon":
        return [Cell("horizon", f"horizon={h}", str(h), horizon=h) for h in g.horizons]
    if cfg.mode == "noise":
        out = [Cell("noise", "noise=none", "0")]
        out += [Cell("noise", f"noise=gaussian:{s!r}", repr(float(s)), noise=f"gaussian:{s!r}") for s in g.gaussian]
        out += [Cell("noise", f"noise=poisson:{l!r}", repr(float(l)), noise=f"poisson:{l!r}") for l in g.poisson]
        return out
    if cfg.mode == "hparam":
        out = [Cell("hparam", f"d_h={h}", str(h), d_h=h) for h in g.hidden]
        out += [Cell("hparam", f"dim={d}", str(d), dim=d) for d in g.embed_dims]
        return out
    if cfg.mode == "baselines":
        return [Cell("baselines", f"model={m}", m, model=m, knowledge="none" if m != "kstgcn" else "both")
                for m in ("ha", "gru_only", "gcn_gru", "kstgcn")]
    raise ConfigError(cfg.mode)


# -- stages ------------------------------------------------------------------

class Stages:
    """Cached pipeline stages under ``<out>/cache``."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.cache = Path(cfg.out) / "cache"

    def _dir(self, stage: str, key: str) -> Path:
        return self.cache / f"{stage}-{key}"

    def scenario_key(self) -> str:
        if self.cfg.scenario_path is not None:
            p = Path(self.cfg.scenario_path)
            h = hashlib.sha256()
            for name in sorted(x.name for x in p.iterdir() if x.is_file()):
                h.update(name.encode())
                h.update((p / name).read_bytes())
            return h.hexdigest()[:16]
        return fingerprint(self.cfg.scenario.to_dict())

    def scenario(self) -> tuple[CityScenario, str]:
        key = self.scenario_key()
        if self.cfg.scenario_path is not None:
            return load_scenario(self.cfg.scenario_path), key
        d = self._dir("scenario", key)
        if not (d / "done").exists():
            save_scenario(generate_scenario(self.cfg.scenario), d)
            (d / "done").touch()
        return load_scenario(d), key

    def kg(self, sc: CityScenario, sc_key: str):
        key = fingerprint(sc_key, asdict(self.cfg.kg))
        d = self._dir("kg", key)
        if not (d / "done").exists():
            store = build_ckg(sc.graph, sc.poi_counts, sc.weather, sc.speeds.time_ids,
                              include_adj2=self.cfg.kg.include_adj2, link_sections=self.cfg.kg.link_sections)
            save_store(store, d)
            (d / "done").touch()
        return load_store(d), key

    def embedding(self, store, kg_key: str, embed: KrearConfig):
        key = fingerprint(kg_key, asdict(embed))
        d = self._dir("embed", key)
        if not (d / "done").exists():
            res = train_krear(store, embed)
            save_table(res.table, d)
            (d / "done").touch()
        return load_table(d), key


def run_cell(cfg: ExperimentConfig, cell: Cell, seed: int) -> MetricReport:
    """Train and evaluate one (cell, seed); cached on disk."""
    st = Stages(cfg)
    sc, sc_key = st.scenario()
    embed = replace(cfg.embed, seed=seed, dim=cell.dim or cfg.embed.dim)
    mcfg = replace(cfg.model, horizon=cell.horizon or cfg.train.horizon, d_h=cell.d_h or cfg.model.d_h)
    tcfg = replace(cfg.train, seed=seed, horizon=mcfg.horizon)
    # keyed on what the cell computes, so e.g. horizon=1 reuses the full ablation cell;
    # the GCN+GRU baseline is the composed model without knowledge
    arch = "kstgcn" if cell.model == "gcn_gru" else cell.model
    key = fingerprint(sc_key, asdict(cfg.kg), asdict(embed), asdict(mcfg), asdict(tcfg), cell.knowledge,
                      arch, cell.noise, seed, cfg.noise_targets)
    d = st._dir("cell", key)
    if (d / "metrics.csv").exists():
        return _read_metrics(d / "metrics.csv")

    T, n = sc.speeds.n_steps, sc.speeds.n_nodes
    static, dynamic = KNOWLEDGE[cell.knowledge]
    if static or dynamic:
        store, kg_key = st.kg(sc, sc_key)
        table, _ = st.embedding(store, kg_key, embed)
        kv = extract_knowledge_vectors(table, store, sc.speeds.time_ids, sections=list(sc.graph.node_ids))
        kv = kv.select(static, dynamic)
    else:
        kv = KnowledgeVectors.empty(n, T)
    p = np.eye(n) if cell.model == "gru_only" else propagation_matrix(sc.graph)
    speeds, inputs = sc.speeds, None
    if cell.noise is not None:
        inputs = perturb(sc.speeds, NoiseSpec.parse(cell.noise), seed)
        if cfg.noise_targets:
            speeds = inputs
    data = ForecastData.build(speeds, kv, p, tcfg.train_fraction, inputs=inputs)
    if cfg.noise_targets and cell.noise is not None:
        # score against clean speeds even when trained on noisy labels
        data.targets = (sc.speeds.values - data.bounds[0]) / data.span

    d.mkdir(parents=True, exist_ok=True)
    if cell.model == "ha":
        report = evaluate(*historical_average(data, tcfg))
    else:
        mcfg = replace(mcfg, d_s=kv.d_s, d_d=kv.d_d)
        result = train(ForecastModel.init(mcfg, seed), data, tcfg, eval_every=max(tcfg.epochs, 1))
        write_history(result.history, d / "history.csv")
        report = evaluate_split(result.model, data, tcfg)
    _write_metrics(report, d / "metrics.csv")
    return report


def _write_metrics(r: MetricReport, path: Path) -> None:
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        w.writerow(r.as_row())
    tmp.replace(path)


def _read_metrics(path: Path) -> MetricReport:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return MetricReport(*[math.nan if x == "*" else float(x) for x in rows[1]])


def _job(args):
    cfg, cell, seed = args
    return run_cell(cfg, cell, seed)


# -- sweep -------------------------------------------------------------------

def run(cfg: ExperimentConfig) -> int:
    """Run every (cell, seed) of the configured mode; write results, summary and
    plot data. Returns a process exit status."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        cfg.validate()
        cells = cells_for(cfg)
        jobs = [(cfg, c, s) for c in cells for s in cfg.seeds]
        # materialize shared stages once before fanning out
        Stages(cfg).scenario()
        if cfg.jobs > 1:
            with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
                reports = list(ex.map(_job, jobs))
        else:
            reports = [_job(j) for j in jobs]
        rows = [(c.mode, c.label, c.x, s, r) for (_, c, s), r in zip(jobs, reports)]
        write_results(rows, out / "results.csv")
        write_summary(rows, out / "summary.csv")
        export_plotdata(out)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, default=_jsonable),
                                         encoding="utf-8")
    except Exception:
        (out / "error.log").write_text(traceback.format_exc(), encoding="utf-8")
        log.error("run failed; see %s", out / "error.log")
        return 1
    return 0


def write_results(rows, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for mode, label, x, seed, r in rows:
            w.writerow([mode, label, x, seed] + r.as_row())


def write_summary(rows, path: Path) -> None:
    """Per-cell medians over seeds, cells in first-seen order."""
    groups: dict[tuple, list[MetricReport]] = {}
    for mode, label, x, _, r in rows:
        groups.setdefault((mode, label, x), []).append(r)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for (mode, label, x), reps in groups.items():
            meds = []
            for c in COLUMNS:
                vals = [getattr(r, c) for r in reps]
                meds.append(math.nan if any(math.isnan(v) for v in vals) else median(vals))
            w.writerow([mode, label, x, len(reps)] + MetricReport(*meds).as_row())


def read_results(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def read_summary(path: str | Path) -> list[dict]:
    return read_results(path)


def export_plotdata(results_dir: str | Path) -> list[Path]:
    """Long-format CSVs (x, metric, value, seed), one per sweep curve.

    Noise sweeps give one file per noise kind, each starting at the clean run
    (x = 0); hyperparameter sweeps give one file per swept parameter.
    """
    results_dir = Path(results_dir)
    path = results_dir / "results.csv"
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist")
    rows = read_results(path)
    if not rows:
        raise ValueError(f"{path} holds no results")
    curves: dict[str, list[dict]] = {}
    for r in rows:
        mode, label = r["mode"], r["cell"]
        if mode == "noise":
            kinds = ["gaussian", "poisson"] if label == "noise=none" else [label.split("=")[1].split(":")[0]]
            for k in kinds:
                curves.setdefault(f"noise_{k}", []).append(r)
        elif mode == "hparam":
            curves.setdefault(f"hparam_{label.split('=')[0]}", []).append(r)
        else:
            curves.setdefault(mode, []).append(r)
    written = []
    for name, rs in curves.items():
        out = results_dir / f"plot_{name}.csv"
        with open(out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PLOT_COLUMNS)
            for r in rs:
                for m in COLUMNS:
                    w.writerow([r["x"], m, r[m], r["seed"]])
        written.append(out)
    return written


def read_plotdata(path: str | Path) -> list[dict]:
    return read_results(path)


def median_by_x(plot_rows: list[dict], metric: str = "rmse") -> dict[str, float]:
    """Median of ``metric`` per x value, in first-seen x order."""
    acc: dict[str, list[float]] = {}
    for r in plot_rows:
        if r["metric"] == metric:
            acc.setdefault(r["x"], []).append(float(r["value"]))
    return {x: median(v) for x, v in acc.items()}


__all__ = ["ExperimentConfig", "Grids", "KgOptions", "ConfigError", "Cell", "cells_for", "Stages",
           "run_cell", "run", "write_results", "write_summary", "read_results", "read_summary",
           "export_plotdata", "read_plotdata", "median_by_x", "fingerprint", "MODES", "EffectConfig"]
