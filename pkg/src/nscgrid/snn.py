"""Feedforward spiking network with spike-response neurons and online STDP.

Each layer keeps two exponential traces per input (membrane and synaptic
time constants) whose difference realises the alpha kernel, and one
refractory trace per neuron that subtracts the threshold after a spike.
All state updates are recursive, so no spike history is stored.  The same
layer recursion is used by the offline trainer in batched form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .codec import Decoder, EncoderConfig


class WidthMismatchError(ValueError):
    """Input or model width does not match the network shape."""


@dataclass(frozen=True)
class NeuronConfig:
    tau_m: float = 10e-3
    tau_syn: float = 2e-3
    tau_ref: float = 4e-3
    u_thr: float = 1.0
    dt: float = 1e-3

    def __post_init__(self):
        if not self.tau_m > self.tau_syn > 0:
            raise ValueError("need tau_m > tau_syn > 0")
        if self.tau_ref <= 0 or self.u_thr <= 0 or self.dt <= 0:
            raise ValueError("tau_ref, u_thr and dt must be positive")

    @property
    def decays(self) -> tuple[float, float, float]:
        return (math.exp(-self.dt / self.tau_m), math.exp(-self.dt / self.tau_syn),
                math.exp(-self.dt / self.tau_ref))

    def alpha_peak(self) -> float:
        """Continuous-time maximum of exp(-t/tau_m) - exp(-t/tau_syn)."""
        tm, ts = self.tau_m, self.tau_syn
        t = math.log(tm / ts) * tm * ts / (tm - ts)
        return math.exp(-t / tm) - math.exp(-t / ts)


def fire(u, u_thr: float):
    """Heaviside of u - threshold; exactly 0 at equality."""
    return (np.asarray(u) - u_thr > 0).astype(np.float64)


@dataclass
class LayerState:
    trace_m: np.ndarray
    trace_s: np.ndarray
    refractory: np.ndarray
    last_spikes: np.ndarray

    @classmethod
    def zeros(cls, n_in: int, n_out: int, batch: tuple = ()) -> "LayerState":
        return cls(np.zeros(batch + (n_in,)), np.zeros(batch + (n_in,)),
                   np.zeros(batch + (n_out,)), np.zeros(batch + (n_out,)))


def membrane_step(weights: np.ndarray, spikes_in: np.ndarray, state: LayerState, cfg: NeuronConfig):
    """Advance one layer's filters by a tick and return (u, h).

    ``weights`` has shape (n_in, n_out); the state is updated in place.
    """
    dm, ds, dr = cfg.decays
    state.trace_m = dm * (state.trace_m + spikes_in)
    state.trace_s = ds * (state.trace_s + spikes_in)
    state.refractory = dr * (state.refractory + state.last_spikes)
    h = state.trace_m - state.trace_s
    u = h @ weights - cfg.u_thr * state.refractory
    return u, h


def init_weights(widths: list[int], rng: np.random.Generator) -> list[np.ndarray]:
    return [rng.uniform(0.0, 1.0 / n_in, size=(n_in, n_out)) for n_in, n_out in zip(widths[:-1], widths[1:])]


@dataclass
class SnnModel:
    """Weights, neuron constants, encoder and decode calibration for one node."""

    weights: list[np.ndarray]
    neuron: NeuronConfig = field(default_factory=NeuronConfig)
    encoder: EncoderConfig | None = None
    scale: np.ndarray | None = None
    offset: np.ndarray | None = None
    decode_tau: float = 0.02
    node: int = 0
    remotes: tuple[int, ...] = ()
    plasticity: "StdpLayer | None" = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.weights = [np.array(w, dtype=np.float64) for w in self.weights]
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise WidthMismatchError("consecutive weight shapes do not chain")
        if self.encoder is not None and self.encoder.width != self.widths[0]:
            raise WidthMismatchError(f"encoder width {self.encoder.width} != input width {self.widths[0]}")
        if not all(np.all(np.isfinite(w)) for w in self.weights):
            raise ValueError("weights must be finite")
        self.reset()

    @classmethod
    def initialized(cls, widths: list[int], seed: int, **kw) -> "SnnModel":
        if any(w < 1 for w in widths):
            raise ValueError("layer widths must be >= 1")
        return cls(init_weights(list(widths), np.random.default_rng(seed)), **kw)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def calibrated(self) -> bool:
        return self.scale is not None and self.offset is not None

    def effective_weights(self, layer: int) -> np.ndarray:
        # the STDP conductance multiplies the output layer, unity at g = g_max/2
        if layer == len(self.weights) - 1 and self.plasticity is not None:
            return self.weights[layer] * (2.0 * self.plasticity.g / self.plasticity.config.g_max)
        return self.weights[layer]

    def reset(self) -> None:
        w = self.widths
        self.states = [LayerState.zeros(a, b) for a, b in zip(w[:-1], w[1:])]

    def forward_tick(self, spikes_in: np.ndarray):
        """One tick through all layers; returns (output spikes, spike count per layer)."""
        x = np.asarray(spikes_in, dtype=np.float64)
        if x.shape != (self.widths[0],):
            raise WidthMismatchError(f"expected input width {self.widths[0]}, got {x.shape}")
        counts = []
        for layer, st in enumerate(self.states):
            u, _ = membrane_step(self.effective_weights(layer), x, st, self.neuron)
            s = fire(u, self.neuron.u_thr)
            st.last_spikes = s
            counts.append(int(s.sum()))
            if layer == len(self.states) - 1 and self.plasticity is not None:
                self.plasticity.tick(x, s, self.neuron.dt)
            x = s
        return x, counts

    def decoder(self) -> Decoder:
        return Decoder(self.widths[-1], self.decode_tau, self.neuron.dt, self.scale, self.offset)

    def enable_stdp(self, config: "StdpConfig") -> None:
        self.plasticity = StdpLayer(config, self.widths[-2], self.widths[-1])


@dataclass(frozen=True)
class StdpConfig:
    a_plus: float = 0.01
    a_minus: float = 0.01
    tau_plus: float = 20e-3
    tau_minus: float = 20e-3
    g_max: float = 1.0

    def __post_init__(self):
        for name in ("a_plus", "a_minus", "tau_plus", "tau_minus", "g_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def stdp_delta_w(t_pre: float, t_post: float, config: StdpConfig) -> float:
    if t_post > t_pre:
        return config.a_plus * math.exp((t_pre - t_post) / config.tau_plus)
    if t_post < t_pre:
        return -config.a_minus * math.exp(-(t_pre - t_post) / config.tau_minus)
    return 0.0


@dataclass
class StdpTraces:
    """Pre-synaptic trace S (positive), post-synaptic trace Q (negative), conductances g."""

    s: np.ndarray
    q: np.ndarray
    g: np.ndarray

    @classmethod
    def initial(cls, n_pre: int, n_post: int, config: StdpConfig) -> "StdpTraces":
        return cls(np.zeros(n_pre), np.zeros(n_post), np.full((n_pre, n_post), 0.5 * config.g_max))


def trace_tick(traces: StdpTraces, pre: np.ndarray, post: np.ndarray, dt: float,
               config: StdpConfig) -> StdpTraces:
    """Decay both traces over dt, then add this tick's spikes."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    s = traces.s * math.exp(-dt / config.tau_plus) + config.a_plus * np.asarray(pre, dtype=float)
    q = traces.q * math.exp(-dt / config.tau_minus) - config.a_minus * np.asarray(post, dtype=float)
    return StdpTraces(s, q, traces.g)


def conductance_update(traces: StdpTraces, pre: np.ndarray, post: np.ndarray, config: StdpConfig) -> np.ndarray:
    """Potentiate at post-spikes from S, depress at pre-spikes from Q, clamp to [0, g_max]."""
    pre = np.asarray(pre, dtype=float)
    post = np.asarray(post, dtype=float)
    g = traces.g + config.g_max * (np.outer(traces.s, post) + np.outer(pre, traces.q))
    return np.clip(g, 0.0, config.g_max)


def total_conductance(traces: StdpTraces) -> float:
    return float(traces.g.sum())


class StdpLayer:
    """Online STDP on one weight block; pairs inside the same tick contribute nothing."""

    def __init__(self, config: StdpConfig, n_pre: int, n_post: int):
        self.config = config
        self.traces = StdpTraces.initial(n_pre, n_post, config)
        self.enabled = False

    @property
    def g(self) -> np.ndarray:
        return self.traces.g

    def tick(self, pre: np.ndarray, post: np.ndarray, dt: float) -> None:
        if not self.enabled:
            return
        c = self.config
        decayed = StdpTraces(self.traces.s * math.exp(-dt / c.tau_plus),
                             self.traces.q * math.exp(-dt / c.tau_minus), self.traces.g)
        g = conductance_update(decayed, pre, post, c)
        self.traces = StdpTraces(decayed.s + c.a_plus * pre, decayed.q - c.a_minus * post, g)
