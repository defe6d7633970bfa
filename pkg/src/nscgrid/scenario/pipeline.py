"""Training orchestration and estimate evaluation for whole cases."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..codec import EncoderConfig, encode
from ..modelio import save_model
from ..snn import NeuronConfig, SnnModel
from ..training import TrainConfig, fit_output_layer, relay_init, train_offline
from .config import SnnConfig
from .dataset import NodeDataset

log = logging.getLogger(__name__)

ENCODER_QUANTILE = 0.02
RELAY_GAIN = 2.0


@dataclass
class TrainedCase:
    models: dict[int, SnnModel]
    history: dict[int, list[float]]

    def save(self, model_path: str | Path) -> tuple[Path, Path]:
        """Write the model bundle and ``<stem>.loss.csv`` beside it."""
        model_path = Path(model_path)
        model_path.parent.mkdir(parents=True, exist_ok=True)
        save_model([self.models[k] for k in sorted(self.models)], model_path)
        loss_path = model_path.with_suffix(".loss.csv")
        nodes = sorted(self.history)
        n_epochs = max((len(h) for h in self.history.values()), default=0)
        with open(loss_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch"] + [f"node_{k}" for k in nodes])
            for e in range(n_epochs):
                w.writerow([e + 1] + [repr(self.history[k][e]) for k in nodes])
        return model_path, loss_path


def initial_model(data: NodeDataset, snn: SnnConfig, neuron: NeuronConfig, seed: int) -> SnnModel:
    """Untrained network sized for ``data``, with encoder ranges fitted to its inputs."""
    feats = data.inputs[data.mask]
    enc = EncoderConfig.fit(feats, quantile=ENCODER_QUANTILE, tuning_width=snn.tuning_width)
    widths = [enc.width, *snn.hidden, data.targets.shape[2]]
    return SnnModel.initialized(widths, seed + data.node, neuron=neuron, encoder=enc, decode_tau=snn.decode_tau,
                                node=data.node, remotes=data.remotes)


def train_case(data: dict[int, NodeDataset], snn: SnnConfig, neuron: NeuronConfig, seed: int,
               epochs: int | None = None) -> TrainedCase:
    """Train one network per node on its segments."""
    models, history = {}, {}
    cfg = TrainConfig(epochs=snn.epochs if epochs is None else epochs, lr=snn.lr)
    for k in sorted(data):
        d = data[k]
        model = initial_model(d, snn, neuron, seed)
        spikes = encode(d.inputs, model.encoder).astype(np.float64)
        if cfg.epochs:
            relay_init(model, RELAY_GAIN)
            fit_output_layer(model, spikes, d.targets, d.mask, ridge=snn.readout_ridge)
        history[k] = train_offline(model, spikes, d.targets, d.mask, cfg)
        if history[k]:
            log.info("node %d: loss %.4g -> %.4g", k, history[k][0], history[k][-1])
        models[k] = model
    return TrainedCase(models, history)


def run_estimates(model: SnnModel, inputs: np.ndarray, start: np.ndarray | None = None) -> np.ndarray:
    """Decoded estimates for each segment of ``inputs`` (B, T, 4), each from a reset state.

    ``start`` (B, n_out) seeds each segment's decoder, standing in for the held benchmark.
    """
    out = np.zeros((inputs.shape[0], inputs.shape[1], model.widths[-1]))
    for b, seg in enumerate(inputs):
        model.reset()
        dec = model.decoder()
        dec.reset(None if start is None else start[b])
        for t, f in enumerate(seg):
            s, _ = model.forward_tick(encode(f, model.encoder))
            dec.step(s)
            out[b, t] = dec.value()
    model.reset()
    return out


def relative_rms(estimate: np.ndarray, truth: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Per-channel RMS error divided by the RMS of the true signal."""
    estimate = np.asarray(estimate, float).reshape(-1, np.shape(truth)[-1])
    truth = np.asarray(truth, float).reshape(-1, estimate.shape[1])
    if mask is not None:
        sel = np.asarray(mask, bool).reshape(-1)
        estimate, truth = estimate[sel], truth[sel]
    err = np.sqrt(np.mean((estimate - truth) ** 2, axis=0))
    return err / np.sqrt(np.mean(truth ** 2, axis=0))


def event_window_errors(result, after: float = 0.0) -> dict[int, dict[str, float]]:
    """Relative RMS of every estimate over each node's first event window opening at or after ``after`` s.

    Estimates ``vhat_k_j`` are scored against ``vbar_j`` and ``ihat_k_j``
    against ``i_j``.  Nodes without such an event are left out.
    """
    t = result.t
    out = {}
    for k in result.config.converter_ids:
        flag = result.column(f"event_{k}") > 0.5
        cand = np.flatnonzero(flag & (t >= after - 1e-9))
        if len(cand) == 0:
            continue
        s = int(cand[0])
        closed = np.flatnonzero(~flag[s:])
        e = s + int(closed[0]) if len(closed) else len(flag)
        errs = {}
        for name in result.columns:
            for prefix, truth in (("vhat", "vbar"), ("ihat", "i")):
                if name.startswith(f"{prefix}_{k}_"):
                    j = name.split("_")[2]
                    errs[name] = float(relative_rms(result.column(name)[s:e, None],
                                                    result.column(f"{truth}_{j}")[s:e, None])[0])
        out[k] = errs
    return out
