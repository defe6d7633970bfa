"""Training data from CLC sweep runs.

Each sweep item is one short CLC run with a single load step.  For every
converter the recording starts at the tick its first event opens and spans
``sweep_ticks`` ticks; rows after that event closes are kept (so every
segment has the same length) but masked out of the loss.

Layout under the output directory::

    node_<k>/inputs.csv    v, i, dv, di per tick
    node_<k>/targets.csv   vbar_j, i_j for each remote j per tick
    node_<k>/meta.json     segment count and length, valid ticks, remotes
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..codec import FEATURES
from .config import Action, ScenarioConfig, SweepItem
from .runner import initial_remotes, simulate

log = logging.getLogger(__name__)

STEP_TIME = 0.05  # seconds of settled operation before each sweep step


class DatasetError(ValueError):
    """The sweep is empty, produced no events, or a dataset directory is malformed."""


@dataclass
class NodeDataset:
    node: int
    remotes: tuple[int, ...]
    inputs: np.ndarray  # (B, T, 4)
    targets: np.ndarray  # (B, T, 2 * len(remotes))
    lengths: np.ndarray  # valid ticks per segment

    @property
    def mask(self) -> np.ndarray:
        T = self.inputs.shape[1]
        return np.arange(T)[None, :] < self.lengths[:, None]

    @property
    def target_names(self) -> list[str]:
        return [f"{q}_{j}" for j in self.remotes for q in ("vbar", "i")]


def sweep_config(cfg: ScenarioConfig, item: SweepItem) -> ScenarioConfig:
    """Single-step CLC run for one sweep item."""
    nodes = [n for n in cfg.to_dict()["nodes"]]
    for n in nodes:
        if n["id"] == item.node:
            n["load"]["value"] = item.before
    duration = STEP_TIME + (cfg.sweep_ticks + 50) * cfg.dt_control
    step = Action(STEP_TIME, "load-step", node=item.node, value=item.after)
    return cfg.with_changes(nodes=nodes, timeline=[step.__dict__], mode="clc", duration=duration, sweep=[],
                            model=None)


def _segment(result, k: int, remotes: tuple[int, ...], ticks: int):
    act = result.active[k]
    start = np.flatnonzero(act)
    if len(start) == 0:
        return None
    s = int(start[0])
    n_total = len(act)
    if s + ticks > n_total:
        raise DatasetError(f"node {k}: event at tick {s} leaves fewer than {ticks} ticks in the run")
    closed = np.flatnonzero(~act[s:s + ticks])
    length = int(closed[0]) if len(closed) else ticks
    feats = result.features[k][s:s + ticks]
    cols = [result.column(f"{q}_{j}")[s:s + ticks] for j in remotes for q in ("vbar", "i")]
    return feats, np.stack(cols, axis=1), length


def generate_dataset(cfg: ScenarioConfig) -> dict[int, NodeDataset]:
    """Run the sweep and collect one segment per item for every converter."""
    if not cfg.sweep:
        raise DatasetError("sweep is empty")
    remotes = initial_remotes(cfg)
    parts: dict[int, list] = {k: [] for k in cfg.converter_ids}
    for n, item in enumerate(cfg.sweep):
        res = simulate(sweep_config(cfg, item), record_features=True)
        for k in cfg.converter_ids:
            seg = _segment(res, k, remotes[k], cfg.sweep_ticks)
            if seg is None:
                log.warning("sweep item %d: no event at node %d", n, k)
                continue
            parts[k].append(seg)
    empty = [k for k, p in parts.items() if not p]
    if empty:
        raise DatasetError(f"sweep produced zero events at node(s) {empty}; lower the thresholds "
                           "or enlarge the sweep steps")
    out = {}
    for k, segs in parts.items():
        out[k] = NodeDataset(k, remotes[k], np.stack([s[0] for s in segs]), np.stack([s[1] for s in segs]),
                             np.array([s[2] for s in segs]))
    return out


def _write_matrix(path: Path, header: list[str], rows: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) for x in r])


def write_dataset(data: dict[int, NodeDataset], out_dir: str | Path, cfg: ScenarioConfig | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, d in data.items():
        nd = out / f"node_{k}"
        nd.mkdir(exist_ok=True)
        B, T, _ = d.inputs.shape
        _write_matrix(nd / "inputs.csv", list(FEATURES), d.inputs.reshape(B * T, -1))
        _write_matrix(nd / "targets.csv", d.target_names, d.targets.reshape(B * T, -1))
        meta = {"node": k, "remotes": list(d.remotes), "segments": B, "segment_ticks": T,
                "lengths": d.lengths.tolist()}
        (nd / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    if cfg is not None:
        cfg.save(out / "config.json")
    return out


def _read_matrix(path: Path) -> tuple[list[str], np.ndarray]:
    if not path.exists():
        raise DatasetError(f"{path} not found")
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(x) for x in row] for row in r]
    return header, np.array(rows, dtype=float).reshape(-1, len(header))


def read_dataset(data_dir: str | Path) -> dict[int, NodeDataset]:
    root = Path(data_dir)
    dirs = sorted(root.glob("node_*"), key=lambda p: int(p.name.split("_")[1]))
    if not dirs:
        raise DatasetError(f"{root}: no node_<k> directories")
    out = {}
    for nd in dirs:
        meta_path = nd / "meta.json"
        if not meta_path.exists():
            raise DatasetError(f"{meta_path} not found")
        meta = json.loads(meta_path.read_text())
        B, T = meta["segments"], meta["segment_ticks"]
        _, x = _read_matrix(nd / "inputs.csv")
        _, y = _read_matrix(nd / "targets.csv")
        if x.shape != (B * T, len(FEATURES)) or y.shape != (B * T, 2 * len(meta["remotes"])):
            raise DatasetError(f"{nd}: inputs {x.shape} / targets {y.shape} disagree with meta.json")
        out[meta["node"]] = NodeDataset(meta["node"], tuple(meta["remotes"]), x.reshape(B, T, -1),
                                        y.reshape(B, T, -1), np.array(meta["lengths"]))
    return out
