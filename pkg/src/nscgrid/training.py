"""Offline supervised training of the SNN with surrogate gradients.

The forward pass is the exact tick recursion of :mod:`nscgrid.snn`, run in
batch over segments that each start from a reset state.  In the backward
pass the Heaviside derivative is replaced by the derivative of a sigmoid
with slope ``k``.  The decode affine (per-output scale and offset) is fitted
jointly with the weights in normalised target units.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .snn import NeuronConfig, SnnModel, WidthMismatchError

log = logging.getLogger(__name__)

SURROGATE_SLOPE = 5.0


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; the learning rate is too high for this data."""


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class Params:
    weights: list[np.ndarray]
    scale: np.ndarray
    offset: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, self.scale, self.offset]

    @classmethod
    def from_arrays(cls, arrays: list[np.ndarray]) -> "Params":
        return cls(list(arrays[:-2]), arrays[-2], arrays[-1])


def _carry_weights(a: float, T: int) -> np.ndarray:
    """Remaining weight of the decoder seed after each tick: a, a^2, ..."""
    return a ** np.arange(1, T + 1)


def forward(params: Params, inputs: np.ndarray, cfg: NeuronConfig, decode_tau: float,
            smooth: bool = False, k: float = SURROGATE_SLOPE, initial: np.ndarray | None = None):
    """Batched forward pass. ``inputs`` has shape (B, T, n_in).

    Returns (y, cache) where y has shape (B, T, n_out) in normalised units.
    With ``smooth`` the sigmoid replaces the Heaviside in the forward pass too.
    ``initial`` (B, n_out) seeds the decoder as at event open.
    """
    dm, ds, dr = cfg.decays
    a = math.exp(-cfg.dt / decode_tau)
    B, T, _ = inputs.shape
    W = params.weights
    n_layers = len(W)
    tm = [np.zeros((B, w.shape[0])) for w in W]
    ts = [np.zeros((B, w.shape[0])) for w in W]
    r = [np.zeros((B, w.shape[1])) for w in W]
    sp = [np.zeros((B, w.shape[1])) for w in W]
    H = [np.empty((B, T, w.shape[0])) for w in W]
    U = [np.empty((B, T, w.shape[1])) for w in W]
    rate = np.zeros((B, W[-1].shape[1]))
    rates = np.empty((B, T, W[-1].shape[1]))
    for t in range(T):
        x = inputs[:, t, :]
        for l in range(n_layers):
            tm[l] = dm * (tm[l] + x)
            ts[l] = ds * (ts[l] + x)
            r[l] = dr * (r[l] + sp[l])
            h = tm[l] - ts[l]
            u = h @ W[l] - cfg.u_thr * r[l]
            H[l][:, t] = h
            U[l][:, t] = u
            if smooth:
                s = _sigmoid(k * (u - cfg.u_thr))
            else:
                s = (u - cfg.u_thr > 0).astype(np.float64)
            sp[l] = s
            x = s
        rate = a * rate + (1.0 - a) * x
        rates[:, t] = rate
    y = params.scale * rates + params.offset
    if initial is not None:
        y = y + _carry_weights(a, T)[None, :, None] * (initial - params.offset)[:, None, :]
    return y, (H, U, rates)


def loss_and_grad(params: Params, inputs: np.ndarray, targets: np.ndarray, mask: np.ndarray | None,
                  cfg: NeuronConfig, decode_tau: float, smooth: bool = False, k: float = SURROGATE_SLOPE,
                  initial: np.ndarray | None = None, channel_weights: np.ndarray | None = None):
    """Masked mean squared error and its gradient with respect to every parameter.

    ``channel_weights`` (n_out,) multiplies each output's squared error.
    """
    dm, ds, dr = cfg.decays
    a = math.exp(-cfg.dt / decode_tau)
    y, (H, U, rates) = forward(params, inputs, cfg, decode_tau, smooth, k, initial)
    B, T, n_out = y.shape
    if mask is None:
        mask = np.ones((B, T))
    m = mask[:, :, None] * np.ones((1, 1, n_out))
    count = m.sum()
    err = (y - targets) * m
    cw = np.ones(n_out) if channel_weights is None else np.asarray(channel_weights, dtype=np.float64)
    loss = float((cw * err ** 2).sum() / count)
    gy = 2.0 * cw * err / count

    W = params.weights
    n_layers = len(W)
    g_scale = (gy * rates).sum(axis=(0, 1))
    if initial is None:
        g_offset = gy.sum(axis=(0, 1))
    else:
        g_offset = (gy * (1.0 - _carry_weights(a, T))[None, :, None]).sum(axis=(0, 1))
    GU = [np.empty_like(u) for u in U]
    c_tm = [np.zeros((B, w.shape[0])) for w in W]
    c_ts = [np.zeros((B, w.shape[0])) for w in W]
    c_r = [np.zeros((B, w.shape[1])) for w in W]
    c_rate = np.zeros((B, n_out))
    for t in range(T - 1, -1, -1):
        g_rate = gy[:, t] * params.scale + c_rate
        c_rate = a * g_rate
        gs = (1.0 - a) * g_rate
        for l in range(n_layers - 1, -1, -1):
            gs = gs + dr * c_r[l]
            z = _sigmoid(k * (U[l][:, t] - cfg.u_thr))
            gu = gs * k * z * (1.0 - z)
            GU[l][:, t] = gu
            gh = gu @ W[l].T
            c_r[l] = -cfg.u_thr * gu + dr * c_r[l]
            c_tm[l] = gh + dm * c_tm[l]
            c_ts[l] = -gh + ds * c_ts[l]
            gs = dm * c_tm[l] + ds * c_ts[l]
    gW = [H[l].reshape(-1, W[l].shape[0]).T @ GU[l].reshape(-1, W[l].shape[1]) for l in range(n_layers)]
    return loss, Params(gW, g_scale, g_offset)


def layer_activity(weights: list[np.ndarray], inputs: np.ndarray, cfg: NeuronConfig) -> list[float]:
    """Fraction of neuron-ticks that spike in each layer for a (B, T, n_in) raster."""
    p = Params(weights, np.ones(weights[-1].shape[1]), np.zeros(weights[-1].shape[1]))
    _, (_, U, _) = forward(p, inputs, cfg, 1.0)
    return [float(np.mean(u > cfg.u_thr)) for u in U]


def _fit_readout(weights, inputs, z, sel, cfg, tau, initial=None):
    """Least-squares scale and offset per output from the untrained network's rates."""
    n_out = weights[-1].shape[1]
    _, (_, _, rates) = forward(Params(weights, np.ones(n_out), np.zeros(n_out)), inputs, cfg, tau)
    B, T = z.shape[:2]
    c = np.zeros((B, T)) if initial is None else np.broadcast_to(
        _carry_weights(math.exp(-cfg.dt / tau), T)[None, :], (B, T))
    scale, offset = np.zeros(n_out), np.zeros(n_out)
    for j in range(n_out):
        y = z[..., j] - (0.0 if initial is None else c * initial[:, None, j])
        A = np.stack([rates[..., j][sel], (1.0 - c)[sel]], axis=1)
        (scale[j], offset[j]), *_ = np.linalg.lstsq(A, y[sel], rcond=None)
    return scale, offset


def relay_init(model: SnnModel, gain: float) -> None:
    """Add ``gain`` on the diagonal of every hidden layer so hidden spikes relay the input code."""
    for layer in range(len(model.weights) - 1):
        w = model.weights[layer].copy()
        n = min(w.shape)
        w[np.arange(n), np.arange(n)] += gain
        model.weights[layer] = w
    model.reset()


def fit_output_layer(model: SnnModel, inputs: np.ndarray, targets: np.ndarray, mask: np.ndarray | None = None,
                     band: tuple[float, float] = (0.02, 0.9), ridge: float = 1e-2) -> None:
    """Set the output weights by ridge regression onto the drive each output needs.

    Each target is mapped linearly onto a spike rate in ``band``; the drive
    that sustains rate p against the refractory trace is
    U_thr * (1 + p * d_r / (1 - d_r)).  Hidden layers are left as they are.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    sel = np.ones(targets.shape[:2], bool) if mask is None else np.asarray(mask, bool)
    n_out = model.widths[-1]
    cfg = model.neuron
    _, (H, _, _) = forward(Params(model.weights, np.ones(n_out), np.zeros(n_out)), inputs, cfg, 1.0)
    h = H[-1][sel]
    y = targets[sel]
    lo, hi = y.min(axis=0), y.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    rate = band[0] + (band[1] - band[0]) * (y - lo) / span
    dr = cfg.decays[2]
    drive = cfg.u_thr * (1.0 + rate * dr / (1.0 - dr))
    w = np.linalg.solve(h.T @ h + ridge * np.eye(h.shape[1]), h.T @ drive)
    model.weights[-1] = w
    model.scale = None
    model.offset = None
    model.reset()


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed_decoder: bool = True
    # weight steps are lr times each matrix's initial RMS, so layers of very
    # different magnitude move by comparable relative amounts
    relative_lr: bool = True
    # score each output by its error relative to the signal's RMS, so a
    # near-constant bus voltage does not outweigh the currents
    relative_loss: bool = True


def train_offline(model: SnnModel, inputs: np.ndarray, targets: np.ndarray, mask: np.ndarray | None = None,
                  config: TrainConfig = TrainConfig()) -> list[float]:
    """Fit weights and decode calibration in place; return the loss after each epoch.

    Full-batch Adam.  The model keeps the best parameters seen so far, and
    the history reports that model's loss, so it never increases.  With
    ``seed_decoder`` each segment's decoder starts from its first target,
    as the runtime decoder starts from the held benchmark.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.ndim != 3 or targets.ndim != 3 or inputs.shape[:2] != targets.shape[:2]:
        raise WidthMismatchError("inputs (B, T, n_in) and targets (B, T, n_out) must agree on B and T")
    if inputs.shape[2] != model.widths[0] or targets.shape[2] != model.widths[-1]:
        raise WidthMismatchError(
            f"dataset widths ({inputs.shape[2]}, {targets.shape[2]}) do not match model "
            f"({model.widths[0]}, {model.widths[-1]})")
    if config.epochs == 0:
        return []
    sel = np.ones(targets.shape[:2], bool) if mask is None else mask.astype(bool)
    mu = targets[sel].mean(axis=0)
    sigma = targets[sel].std(axis=0)
    sigma = np.where(sigma > 1e-9, sigma, 1.0)
    z = (targets - mu) / sigma
    z0 = z[:, 0, :] if config.seed_decoder else None
    cw = None
    if config.relative_loss:
        rms = np.sqrt(np.mean(targets[sel] ** 2, axis=0))
        cw = (sigma / np.where(rms > 1e-12, rms, 1.0)) ** 2
    fmask = sel.astype(np.float64)

    cfg, tau = model.neuron, model.decode_tau
    if model.calibrated:
        scale, offset = model.scale / sigma, (model.offset - mu) / sigma
    else:
        scale, offset = _fit_readout(model.weights, inputs, z, sel, cfg, tau, z0)
    params = Params([w.copy() for w in model.weights], scale, offset)

    m1 = [np.zeros_like(p) for p in params.arrays()]
    m2 = [np.zeros_like(p) for p in params.arrays()]
    rates = [config.lr] * len(m1)
    if config.relative_lr:
        for i, w in enumerate(params.weights):
            rates[i] = config.lr * max(float(np.sqrt(np.mean(w * w))), 1e-6)
    best_loss, best = math.inf, params
    history = []
    for epoch in range(config.epochs):
        loss, grad = loss_and_grad(params, inputs, z, fmask, cfg, tau, initial=z0, channel_weights=cw)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}; lower the learning rate")
        if loss < best_loss:
            best_loss, best = loss, params
        history.append(best_loss)
        if epoch % 50 == 0:
            log.info("epoch %d loss %.6g", epoch, loss)
        t = epoch + 1
        new = []
        for i, (p, g) in enumerate(zip(params.arrays(), grad.arrays())):
            m1[i] = config.beta1 * m1[i] + (1 - config.beta1) * g
            m2[i] = config.beta2 * m2[i] + (1 - config.beta2) * g * g
            mh = m1[i] / (1 - config.beta1 ** t)
            vh = m2[i] / (1 - config.beta2 ** t)
            new.append(p - rates[i] * mh / (np.sqrt(vh) + config.eps))
        params = Params.from_arrays(new)

    model.weights = [w.copy() for w in best.weights]
    model.scale = best.scale * sigma
    model.offset = best.offset * sigma + mu
    model.reset()
    return history
