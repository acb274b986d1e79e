"""Sigma-delta network runtime: conversion of a ReLU actor into a
delta-input / sigma-delta-hidden / sigma-output network, executed either in
float reference form or as an integer-only quantized emulation of
graded-spike neuromorphic hardware.

A delta encoder transmits a component only when its value has moved at least
a threshold away from the last transmitted reference; a sigma decoder
reconstructs by accumulating what arrives. With threshold 0 the accumulated
signal telescopes to the instantaneous value, so the cascaded network's
cumulative output equals the source network's forward pass.

In quantized mode every stored value and every message is an integer:
observations are quantized at the input boundary, weights per layer,
accumulators emulate 32-bit saturating arithmetic, messages carry up to
24 bits of signed magnitude, and inter-layer values are rescaled with an
integer multiply-shift (round half away from zero). Actions are dequantized
back to floats at the output boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .mathcore import QuantSpec, dequantize, quantize, round_half_away

MESSAGE_BITS = 24
MESSAGE_MAX = (1 << (MESSAGE_BITS - 1)) - 1
ACC_BITS = 32
ACC_MAX = (1 << (ACC_BITS - 1)) - 1
ACC_MIN = -(1 << (ACC_BITS - 1))

MODES = ("float", "quantized")
EXEC_FLUSH = "flush"
EXEC_PIPELINED = "pipelined"


class ConversionError(ValueError):
    """Source network is not convertible (non-ReLU hidden activations)."""


@dataclass
class SpikeVector:
    """Sparse graded-spike message: sorted unique indices with signed values."""

    indices: np.ndarray
    values: np.ndarray

    @classmethod
    def empty(cls, quantized: bool) -> "SpikeVector":
        dtype = np.int64 if quantized else np.float64
        return cls(np.empty(0, dtype=np.int64), np.empty(0, dtype=dtype))

    @property
    def nnz(self) -> int:
        return int(self.indices.size)


@dataclass
class DeltaState:
    """Last communicated reference per component plus the firing threshold;
    the reference only ever advances by what was actually emitted."""

    x_ref: np.ndarray
    threshold: float | int


@dataclass
class SigmaState:
    """Running reconstruction of whatever the upstream delta encodes."""

    x_rec: np.ndarray


def delta_encode(state: DeltaState, x: np.ndarray) -> SpikeVector:
    """Emit s = x - x_ref wherever |x - x_ref| >= threshold (firing at
    equality), advancing x_ref by the emitted values."""
    d = np.asarray(x) - state.x_ref
    idx = np.nonzero(np.abs(d) >= state.threshold)[0]
    values = d[idx].copy()
    state.x_ref[idx] += values
    return SpikeVector(idx, values)


def sigma_decode(state: SigmaState, spikes: SpikeVector) -> np.ndarray:
    """Accumulate incoming spikes into the reconstruction and return it."""
    if spikes.nnz:
        if spikes.indices.min() < 0 or spikes.indices.max() >= state.x_rec.size:
            raise IndexError("spike index outside sigma state dimension")
        state.x_rec[spikes.indices] += spikes.values
    return state.x_rec


@dataclass
class OpCounters:
    """Event-driven work accounting used as the energy proxy."""

    synops: int = 0
    dense_macs: int = 0
    messages: int = 0
    neuron_updates: int = 0
    overflows: int = 0
    steps: int = 0
    per_layer_messages: list[int] = field(default_factory=list)
    last_step_messages: int = 0
    last_step_synops: int = 0
    last_step_overflows: int = 0

    def reset(self, n_delta_layers: int) -> None:
        self.synops = self.dense_macs = self.messages = 0
        self.neuron_updates = self.overflows = self.steps = 0
        self.per_layer_messages = [0] * n_delta_layers
        self.last_step_messages = 0
        self.last_step_synops = 0
        self.last_step_overflows = 0

    def bump_overflows(self, k: int) -> None:
        self.overflows += k
        self.last_step_overflows += k


@dataclass(frozen=True)
class QuantConfig:
    """Bit budgets and scale-selection policy for quantized conversion."""

    w_bits: int = 8
    obs_bits: int = 16
    act_bits: int = 16
    action_bits: int = 16
    headroom: float = 2.0
    requant_shift: int = 24

    def __post_init__(self) -> None:
        for name in ("w_bits", "obs_bits", "act_bits", "action_bits"):
            if not 2 <= getattr(self, name) <= MESSAGE_BITS:
                raise ValueError(f"{name} must be in [2, {MESSAGE_BITS}]")
        if self.headroom < 1.0:
            raise ValueError("headroom must be >= 1.0")


def _spec_for(max_abs: float, bits: int, headroom: float) -> QuantSpec:
    """Scale so headroom * max_abs maps to the top of the signed bit budget.
    An all-zero signal is represented exactly at any scale; use 1.0."""
    if max_abs <= 0.0:
        return QuantSpec(scale=1.0, magnitude_bits=bits)
    top = float((1 << (bits - 1)) - 1)
    return QuantSpec(scale=top / (headroom * float(max_abs)), magnitude_bits=bits)


def _requant_params(ratio: float, shift: int) -> tuple[int, int]:
    mult = int(round(ratio * (1 << shift)))
    if mult <= 0:
        raise ConversionError(f"requant ratio {ratio} too small for shift {shift}")
    if mult >= 1 << 31:
        raise ConversionError(f"requant ratio {ratio} too large for shift {shift}")
    return mult, shift


def requant(x: np.ndarray, mult: int, shift: int) -> np.ndarray:
    """Integer multiply-shift rescale, rounding half away from zero."""
    x = np.asarray(x, dtype=np.int64)
    half = np.int64(1) << np.int64(shift - 1)
    mag = (np.abs(x) * np.int64(mult) + half) >> np.int64(shift)
    return np.sign(x) * mag


class SdnnNet:
    """Converted actor: delta input, sigma-delta ReLU hidden layers, sigma
    output. Holds both the float reference parameters and the quantized
    integer parameters; ``mode`` selects which arithmetic the runtime uses.
    """

    def __init__(
        self,
        layer_dims: list[int],
        weights: list[np.ndarray],
        biases: list[np.ndarray],
        thresholds: list[float],
        mode: str,
        quant: QuantConfig,
        obs_spec: QuantSpec,
        act_specs: list[QuantSpec],
        action_spec: QuantSpec,
        weight_specs: list[QuantSpec],
    ):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.layer_dims = list(layer_dims)
        self.n_hidden = len(layer_dims) - 2
        self.weights = [w.astype(np.float64) for w in weights]
        self.biases = [b.astype(np.float64) for b in biases]
        self.thresholds = list(thresholds)
        self.mode = mode
        self.quant = quant
        self.obs_spec = obs_spec
        self.act_specs = list(act_specs)
        self.action_spec = action_spec
        self.weight_specs = list(weight_specs)

        self.weights_q = [quantize(w, spec) for w, spec in zip(weights, self.weight_specs)]
        # Accumulator scales chain input scale x weight scale per layer.
        in_scales = [obs_spec.scale] + [s.scale for s in act_specs]
        self.acc_scales = [s_in * spec.scale for s_in, spec in zip(in_scales, self.weight_specs)]
        self.biases_q = [
            np.clip(round_half_away(b * s), ACC_MIN, ACC_MAX).astype(np.int64)
            for b, s in zip(biases, self.acc_scales)
        ]
        # Integer thresholds live in the units of each delta layer's domain.
        delta_scales = [obs_spec.scale] + [s.scale for s in act_specs]
        self.thresholds_q = [
            int(round_half_away(np.float64(t * s))) for t, s in zip(thresholds, delta_scales)
        ]
        self.requants = [
            _requant_params(act_specs[i].scale / self.acc_scales[i], quant.requant_shift)
            for i in range(self.n_hidden)
        ]
        self.out_requant = _requant_params(
            action_spec.scale / self.acc_scales[-1], quant.requant_shift
        )

        self.counters = OpCounters()
        self.input_delta: DeltaState
        self.hidden_sigma: list[SigmaState]
        self.hidden_delta: list[DeltaState]
        self.out_sigma: SigmaState
        self._pending: list[SpikeVector]
        reset_states(self)

    @property
    def quantized(self) -> bool:
        return self.mode == "quantized"

    @property
    def dense_macs_per_step(self) -> int:
        return sum(self.layer_dims[i] * self.layer_dims[i + 1] for i in range(self.n_hidden + 1))

    # -- runtime internals -------------------------------------------------

    def _zeros(self, n: int) -> np.ndarray:
        return np.zeros(n, dtype=np.int64 if self.quantized else np.float64)

    def _saturate_acc(self, acc: np.ndarray) -> None:
        over = (acc < ACC_MIN) | (acc > ACC_MAX)
        if np.any(over):
            self.counters.bump_overflows(int(np.count_nonzero(over)))
            np.clip(acc, ACC_MIN, ACC_MAX, out=acc)

    def _saturate(self, x: np.ndarray, spec: QuantSpec) -> np.ndarray:
        over = (x < spec.int_min) | (x > spec.int_max)
        if np.any(over):
            self.counters.bump_overflows(int(np.count_nonzero(over)))
            return np.clip(x, spec.int_min, spec.int_max)
        return x

    def _inject(self, observation: np.ndarray) -> SpikeVector:
        obs = np.asarray(observation, dtype=np.float64)
        if obs.shape != (self.layer_dims[0],):
            raise ValueError(f"observation must have shape ({self.layer_dims[0]},)")
        if not np.all(np.isfinite(obs)):
            raise ValueError("non-finite observation")
        x = quantize(obs, self.obs_spec) if self.quantized else obs
        return self._emit(self.input_delta, x, 0)

    def _emit(self, state: DeltaState, x: np.ndarray, delta_layer: int) -> SpikeVector:
        """Delta-encode x; in quantized mode, messages saturate at the graded-
        spike range and the reference advances only by what was actually sent."""
        spikes = delta_encode(state, x)
        if self.quantized and spikes.nnz:
            assert spikes.values.dtype == np.int64, "quantized message must be integer"
            clipped = np.clip(spikes.values, -MESSAGE_MAX, MESSAGE_MAX)
            over = clipped != spikes.values
            if np.any(over):
                self.counters.bump_overflows(int(np.count_nonzero(over)))
                state.x_ref[spikes.indices] -= spikes.values - clipped
                spikes.values = clipped
        self._count_messages(delta_layer, spikes)
        return spikes

    def _accumulate(self, layer: int, sigma: SigmaState, spikes: SpikeVector) -> None:
        """Synaptic accumulation of incoming spikes through weight layer
        ``layer``; one synop per (spike, output neuron) pair."""
        w = self.weights_q[layer] if self.quantized else self.weights[layer]
        if spikes.nnz:
            sigma.x_rec += w[:, spikes.indices] @ spikes.values
            self.counters.synops += spikes.nnz * w.shape[0]
            self.counters.last_step_synops += spikes.nnz * w.shape[0]
            self.counters.neuron_updates += w.shape[0]
        if self.quantized:
            self._saturate_acc(sigma.x_rec)

    def _hidden_forward(self, i: int, spikes: SpikeVector) -> SpikeVector:
        self._accumulate(i, self.hidden_sigma[i], spikes)
        act = np.maximum(self.hidden_sigma[i].x_rec, 0)
        if self.quantized:
            mult, shift = self.requants[i]
            act = self._saturate(requant(act, mult, shift), self.act_specs[i])
        return self._emit(self.hidden_delta[i], act, i + 1)

    def _readout(self, spikes: SpikeVector) -> np.ndarray:
        self._accumulate(self.n_hidden, self.out_sigma, spikes)
        if not self.quantized:
            return self.out_sigma.x_rec.copy()
        mult, shift = self.out_requant
        action_q = self._saturate(requant(self.out_sigma.x_rec, mult, shift), self.action_spec)
        return dequantize(action_q, self.action_spec)

    def _count_messages(self, delta_layer: int, spikes: SpikeVector) -> None:
        self.counters.messages += spikes.nnz
        self.counters.last_step_messages += spikes.nnz
        self.counters.per_layer_messages[delta_layer] += spikes.nnz


def convert(
    actor: mlp.DenseNet,
    thresholds: float | list[float] = 0.1,
    quant: QuantConfig = QuantConfig(),
    calibration_inputs: np.ndarray | None = None,
    mode: str = "quantized",
    hidden_activation: str = "relu",
) -> SdnnNet:
    """Convert a ReLU actor into an SdnnNet.

    Thresholds are given in real (pre-quantization) units, one value for all
    delta layers or one per delta layer (input + each hidden). Quantization
    scales are chosen from the calibration inputs: the maximum absolute
    observation, per-layer ReLU activation, and output seen during a forward
    sweep, with the configured headroom factor.
    """
    if hidden_activation != "relu":
        raise ConversionError(f"cannot convert {hidden_activation!r} hidden activations")
    n_delta = len(actor.layer_dims) - 1  # input delta + one per hidden layer
    if np.isscalar(thresholds):
        th = [float(thresholds)] * n_delta
    else:
        th = [float(t) for t in thresholds]
        if len(th) != n_delta:
            raise ConversionError(f"expected {n_delta} thresholds, got {len(th)}")
    if any(t < 0 for t in th):
        raise ConversionError("thresholds must be non-negative")

    n_hidden = len(actor.layer_dims) - 2
    if calibration_inputs is None:
        # Uncalibrated fallback: unit scales, fine for float mode, coarse for
        # quantized execution.
        obs_spec = QuantSpec(1.0, quant.obs_bits)
        act_specs = [QuantSpec(1.0, quant.act_bits) for _ in range(n_hidden)]
        action_spec = QuantSpec(1.0, quant.action_bits)
    else:
        calib = np.asarray(calibration_inputs, dtype=np.float64)
        if calib.ndim == 1:
            calib = calib[None, :]
        out, cache = mlp.forward(actor, calib)
        obs_spec = _spec_for(np.abs(calib).max(), quant.obs_bits, quant.headroom)
        act_specs = [
            _spec_for(np.maximum(z, 0.0).max(), quant.act_bits, quant.headroom)
            for z in cache.pre_acts[:-1]
        ]
        action_spec = _spec_for(np.abs(out).max(), quant.action_bits, quant.headroom)
    weight_specs = [
        _spec_for(np.abs(w).max(), quant.w_bits, headroom=1.0) for w in actor.weights
    ]
    return SdnnNet(
        layer_dims=actor.layer_dims,
        weights=[w.copy() for w in actor.weights],
        biases=[b.copy() for b in actor.biases],
        thresholds=th,
        mode=mode,
        quant=quant,
        obs_spec=obs_spec,
        act_specs=act_specs,
        action_spec=action_spec,
        weight_specs=weight_specs,
    )


def reconfigure(
    net: SdnnNet, thresholds: float | list[float] | None = None, mode: str | None = None
) -> SdnnNet:
    """New SdnnNet sharing the source parameters and scales, with thresholds
    and/or mode replaced; states start fresh."""
    if thresholds is None:
        th = list(net.thresholds)
    elif np.isscalar(thresholds):
        th = [float(thresholds)] * (net.n_hidden + 1)
    else:
        th = [float(t) for t in thresholds]
    return SdnnNet(
        layer_dims=net.layer_dims,
        weights=net.weights,
        biases=net.biases,
        thresholds=th,
        mode=mode or net.mode,
        quant=net.quant,
        obs_spec=net.obs_spec,
        act_specs=net.act_specs,
        action_spec=net.action_spec,
        weight_specs=net.weight_specs,
    )


def reset_states(net: SdnnNet) -> SdnnNet:
    """Zero all delta references and counters and fold the constant biases
    into the sigma accumulators; weights and scales are untouched."""
    dims = net.layer_dims
    q = net.quantized
    net.input_delta = DeltaState(
        net._zeros(dims[0]), net.thresholds_q[0] if q else net.thresholds[0]
    )
    net.hidden_sigma, net.hidden_delta = [], []
    for i in range(net.n_hidden):
        bias = net.biases_q[i].copy() if q else net.biases[i].copy()
        net.hidden_sigma.append(SigmaState(bias))
        net.hidden_delta.append(
            DeltaState(net._zeros(dims[i + 1]), net.thresholds_q[i + 1] if q else net.thresholds[i + 1])
        )
    net.out_sigma = SigmaState(net.biases_q[-1].copy() if q else net.biases[-1].copy())
    net._pending = [SpikeVector.empty(q) for _ in range(net.n_hidden)]
    net.counters.reset(n_delta_layers=net.n_hidden + 1)
    return net


def sdnn_step(net: SdnnNet, observation: np.ndarray, exec_mode: str = EXEC_FLUSH) -> np.ndarray:
    """Advance the network one control step and return the raw 6-dim action.

    Flush mode propagates through the full depth within the step, so the
    action reflects the current observation. Pipelined mode moves spikes one
    layer hop per step; the action lags by pipeline_latency(net) steps.
    """
    net.counters.last_step_messages = 0
    net.counters.last_step_synops = 0
    net.counters.last_step_overflows = 0
    if exec_mode == EXEC_FLUSH:
        spikes = net._inject(observation)
        for i in range(net.n_hidden):
            spikes = net._hidden_forward(i, spikes)
        action = net._readout(spikes)
    elif exec_mode == EXEC_PIPELINED:
        action = net._readout(net._pending[-1])
        for i in range(net.n_hidden - 1, 0, -1):
            net._pending[i] = net._hidden_forward(i, net._pending[i - 1])
        net._pending[0] = net._hidden_forward(0, net._inject(observation))
    else:
        raise ValueError(f"unknown exec_mode {exec_mode!r}")
    net.counters.dense_macs += net.dense_macs_per_step
    net.counters.steps += 1
    if net.quantized:
        _assert_integer_closure(net)
    return action


def pipeline_latency(net: SdnnNet) -> int:
    """Layer-hop count charged per inference in pipelined accounting: one hop
    per hidden layer."""
    return net.n_hidden


def _assert_integer_closure(net: SdnnNet) -> None:
    states = [net.input_delta.x_ref, net.out_sigma.x_rec]
    states += [s.x_rec for s in net.hidden_sigma] + [d.x_ref for d in net.hidden_delta]
    for s in states:
        if s.dtype != np.int64:
            raise AssertionError("quantized state left integer domain")
        if s.min(initial=0) < ACC_MIN or s.max(initial=0) > ACC_MAX:
            raise AssertionError("quantized state exceeded accumulator range")
