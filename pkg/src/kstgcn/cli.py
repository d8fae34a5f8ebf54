"""Command line entry point: ``kstgcn <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from dataclasses import replace
from pathlib import Path

from .graph import propagation_matrix
from .kg.embed import extract_knowledge_vectors, load_table, save_table, train_krear
from .kg.store import build_ckg, load_store, save_store
from .metrics import write_report
from .model import ForecastModel
from .runner import MODES, ConfigError, ExperimentConfig, run
from .synth import generate_scenario, load_scenario, save_scenario
from .trainer import ForecastData, evaluate_split, train, write_history


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seeds", None):
        cfg.seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    if getattr(args, "jobs", None):
        cfg.jobs = args.jobs
    if args.out:
        cfg.out = args.out
    return cfg


def cmd_synth(args) -> None:
    cfg = _config(args)
    save_scenario(generate_scenario(cfg.scenario), cfg.out)


def cmd_build_kg(args) -> None:
    cfg = _config(args)
    sc = load_scenario(args.scenario)
    store = build_ckg(sc.graph, sc.poi_counts, sc.weather, sc.speeds.time_ids,
                      include_adj2=cfg.kg.include_adj2, link_sections=cfg.kg.link_sections)
    save_store(store, cfg.out)


def cmd_embed(args) -> None:
    cfg = _config(args)
    res = train_krear(load_store(args.kg), cfg.embed)
    save_table(res.table, cfg.out)
    with open(Path(cfg.out) / "history.json", "w", encoding="utf-8") as fh:
        json.dump(res.history, fh)


def _data(args, cfg):
    sc = load_scenario(args.scenario)
    store = load_store(args.kg)
    kv = extract_knowledge_vectors(load_table(args.embedding), store, sc.speeds.time_ids,
                                   sections=list(sc.graph.node_ids))
    return ForecastData.build(sc.speeds, kv, propagation_matrix(sc.graph), cfg.train.train_fraction), kv


def cmd_train(args) -> None:
    cfg = _config(args)
    data, kv = _data(args, cfg)
    mcfg = replace(cfg.model, d_s=kv.d_s, d_d=kv.d_d, horizon=cfg.train.horizon)
    res = train(ForecastModel.init(mcfg, cfg.train.seed), data, cfg.train)
    out = Path(cfg.out)
    res.model.save(out / "model")
    write_history(res.history, out / "history.csv")
    write_report(evaluate_split(res.model, data, cfg.train), out / "metrics.csv")


def cmd_eval(args) -> None:
    cfg = _config(args)
    data, _ = _data(args, cfg)
    model = ForecastModel.load(args.model)
    tcfg = replace(cfg.train, horizon=model.config.horizon)
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    write_report(evaluate_split(model, data, tcfg, args.part), Path(cfg.out) / "metrics.csv")


def cmd_sweep(args) -> int:
    return run(_config(args))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kstgcn", description="Knowledge-augmented traffic speed forecasting")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(fn=fn)
        return p

    add("synth", cmd_synth, "generate a synthetic city scenario")
    p = add("build-kg", cmd_build_kg, "build the city knowledge graph from a scenario")
    p.add_argument("--scenario", required=True)
    p = add("embed", cmd_embed, "train KR-EAR embeddings on a knowledge graph")
    p.add_argument("--kg", required=True)
    for name, fn, help_ in (("train", cmd_train, "train the forecaster"),
                            ("eval", cmd_eval, "evaluate a saved forecaster")):
        p = add(name, fn, help_)
        p.add_argument("--scenario", required=True)
        p.add_argument("--kg", required=True)
        p.add_argument("--embedding", required=True)
        if name == "eval":
            p.add_argument("--model", required=True)
            p.add_argument("--part", choices=("train", "val"), default="val")
    p = add("sweep", cmd_sweep, "run an experiment grid over seeds")
    p.add_argument("--seeds", help="comma-separated seeds, e.g. 1,2,3")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--jobs", type=int, help="worker processes")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        status = args.fn(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            (Path(args.out) / "error.log").write_text(traceback.format_exc(), encoding="utf-8")
        return 2
    return int(status or 0)


if __name__ == "__main__":
    sys.exit(main())
