"""Command-line entry point: simulate, dataset, train, energy-report.

Log verbosity comes from the NSCGRID_LOG environment variable (a logging
level name such as DEBUG or INFO; default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .codec import UntrainedModelError
from .energy import format_report
from .grid import ConfigurationError, NonFiniteStateError
from .modelio import ModelFormatError, load_model
from .snn import NeuronConfig, WidthMismatchError
from .training import TrainingDivergedError
from .scenario.config import SnnConfig, ScenarioConfig
from .scenario.dataset import DatasetError, generate_dataset, read_dataset, write_dataset
from .scenario.metrics import RunFormatError, energy_report
from .scenario.pipeline import train_case
from .scenario.presets import CASE_IDS, case_preset
from .scenario.runner import MissingModelError, simulate, write_run

LOG_ENV = "NSCGRID_LOG"
log = logging.getLogger("nscgrid")

_USER_ERRORS = (ConfigurationError, DatasetError, MissingModelError, ModelFormatError, RunFormatError,
                TrainingDivergedError, UntrainedModelError, WidthMismatchError, NonFiniteStateError,
                FileNotFoundError)


def setup_logging() -> None:
    name = os.environ.get(LOG_ENV, "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if level != getattr(logging, name, None):
        log.warning("%s=%r is not a logging level; using WARNING", LOG_ENV, name)


def load_case(case: str) -> ScenarioConfig:
    """A preset id (I, II, ..., E) or a path to a scenario JSON file."""
    if case.upper() in CASE_IDS:
        return case_preset(case)
    path = Path(case)
    if not path.exists():
        raise ConfigurationError(f"{case!r} is neither a case id ({', '.join(CASE_IDS)}) nor a file")
    return ScenarioConfig.load(path)


def cmd_simulate(args) -> int:
    cfg = load_case(args.case).with_changes(mode=args.mode)
    if args.seed is not None:
        cfg = cfg.with_changes(seed=args.seed)
    model_path = args.model or cfg.model
    models = None
    if model_path:
        models = {m.node: m for m in load_model(model_path)}
        cfg = cfg.with_changes(model=str(model_path))
    t0 = time.perf_counter()
    result = simulate(cfg, models)
    out = write_run(result, args.out)
    log.info("simulated %s (%s) in %.2f s", cfg.name, cfg.mode, time.perf_counter() - t0)
    metrics = json.loads((out / "metrics.json").read_text())
    for n, s in enumerate(metrics["stages"], 1):
        sh = s["final_sharing_error"]
        st = s["sharing_settling_time"]
        print(f"stage {n} [{s['start']:.3f}, {s['end']:.3f}) s: sharing error "
              f"{'n/a' if sh is None else f'{sh:.4%}'}, voltage error {s['final_voltage_error']:.4%}, "
              f"settling {'never' if st is None else f'{st:.3f} s'}")
    print(f"events per node: {metrics['event_count']}")
    print(f"wrote {out}")
    return 0


def cmd_dataset(args) -> int:
    cfg = load_case(args.case)
    data = generate_dataset(cfg)
    out = write_dataset(data, args.out, cfg)
    for k, d in sorted(data.items()):
        B, T, _ = d.inputs.shape
        print(f"node {k}: inputs {B * T}x{d.inputs.shape[2]}, targets {B * T}x{d.targets.shape[2]} "
              f"({B} segments of {T} ticks)")
    print(f"wrote {out}")
    return 0


def cmd_train(args) -> int:
    data = read_dataset(args.data)
    cfg_path = Path(args.data) / "config.json"
    if cfg_path.exists():
        cfg = ScenarioConfig.load(cfg_path)
        snn, neuron = cfg.snn, cfg.neuron
    else:
        log.warning("%s not found; using default network settings", cfg_path)
        snn, neuron = SnnConfig(), NeuronConfig()
    trained = train_case(data, snn, neuron, args.seed, args.epochs)
    model_path, loss_path = trained.save(args.out)
    for k, h in sorted(trained.history.items()):
        if h:
            print(f"node {k}: loss {h[0]:.6g} -> {h[-1]:.6g} over {len(h)} epochs")
        else:
            print(f"node {k}: no training (epochs = 0)")
    print(f"wrote {model_path} and {loss_path}")
    return 0


def cmd_energy_report(args) -> int:
    rep = energy_report(args.run)
    if not rep["nodes"]:
        print("no SNN ran in this run; nothing metered")
        return 0
    print(format_report(rep))
    print(f"event-gated SNN accumulates: {rep['snn_event_gated_acc']}")
    print(f"E_SNN <= E_RNN < E_ANN: {rep['verdict']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nscgrid", description="DC microgrid co-simulation with SNN estimators")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario and write CSV + metrics")
    s.add_argument("--case", required=True, help="case id (I, II, III, IV, V, E) or scenario JSON path")
    s.add_argument("--mode", required=True, choices=("clc", "nsc"))
    s.add_argument("--model", help="trained model bundle (.nsnn); required for nsc")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("dataset", help="generate the CLC training sweep for a case")
    d.add_argument("--case", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dataset)

    t = sub.add_parser("train", help="train per-node SNNs on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="model file; the loss log goes beside it")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("energy-report", help="compare SNN/RNN/ANN energy for a run directory")
    e.add_argument("--run", required=True)
    e.set_defaults(func=cmd_energy_report)
    return p


def main(argv: list[str] | None = None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "epochs", 0) < 0:
        print("error: --epochs must be >= 0", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
