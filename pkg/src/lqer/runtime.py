"""Approximate linear layers and a small chained-layer evaluation harness.

A layer computes ``Y~ = X_q dq(W_q) + (X_q A_k) B_k`` where ``X_q`` is the
activation snapped to ``act_quant`` (or ``X`` itself when no activation
format is set). Every product is evaluated in float64 on snapped values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Sequence

import numpy as np

from .calibration import CalibrationProfile, apply_scale, calibrate
from .errors import ArgumentError, ShapeError
from .formats import QuantConfig, QuantizedMatrix, dequantize_matrix, quantize_matrix, snap
from .linalg import as_matrix, frobenius_norm, svd
from .reconstruction import (
    LowRankCorrection,
    l2qer_from_svd,
    lqer_from_svd,
    quant_error,
)

LayerMethod = Literal["plain", "lqer", "l2qer"]
METHODS: tuple[str, ...] = ("plain", "lqer", "l2qer")
NONLINEARITIES = ("relu", "none")


@dataclass(frozen=True, eq=False)
class LqerLayer:
    w_q: QuantizedMatrix
    correction: LowRankCorrection | None = None
    act_quant: QuantConfig | None = None
    reference_w: np.ndarray | None = None

    def __post_init__(self):
        if self.correction is not None and self.correction.shape != self.w_q.shape:
            raise ShapeError(f"correction shape {self.correction.shape} does not match weights {self.w_q.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.w_q.shape

    @property
    def method(self) -> str:
        return "plain" if self.correction is None else self.correction.method

    @cached_property
    def w_dq(self) -> np.ndarray:
        return dequantize_matrix(self.w_q)


def _factor(e_q, method, k, profile, factor_quant, cache=None):
    key = None
    if cache is not None:
        key = (method, None if profile is None else profile.digest())
        decomp = cache.get(key)
    else:
        decomp = None
    if method == "lqer":
        if decomp is None:
            decomp = svd(e_q)
        corr = lqer_from_svd(decomp, k, factor_quant)
    else:
        if decomp is None:
            decomp = svd(apply_scale(e_q, profile, "forward"))
        corr = l2qer_from_svd(decomp, profile, k, factor_quant)
    if cache is not None:
        cache[key] = decomp
    return corr


def build_layer(
    w,
    cfg: QuantConfig,
    method: LayerMethod = "lqer",
    k: int = 32,
    profile: CalibrationProfile | None = None,
    act_quant: QuantConfig | None = None,
    factor_quant: QuantConfig | None = None,
    *,
    _svd_cache: dict | None = None,
) -> LqerLayer:
    """Quantize ``w`` and attach the low-rank correction for ``method``."""
    w = as_matrix(w)
    if method not in METHODS:
        raise ArgumentError(f"unknown method {method!r}; expected one of {METHODS}")
    w_q = quantize_matrix(w, cfg)
    if method == "plain":
        return LqerLayer(w_q, None, act_quant, w)
    if method == "l2qer":
        if profile is None:
            raise ArgumentError("method 'l2qer' requires a calibration profile")
        if profile.channels != w.shape[0]:
            raise ArgumentError(f"profile has {profile.channels} channels but weight has {w.shape[0]} rows")
    r = min(w.shape)
    if isinstance(k, bool) or int(k) != k or not 1 <= k <= r:
        raise ArgumentError(f"rank k must be in [1, {r}], got {k}")
    e_q = quant_error(w, w_q)
    if not e_q.any():
        m, n = w.shape
        corr = LowRankCorrection(np.zeros((m, k)), np.zeros((k, n)), method, factor_quant)
    else:
        corr = _factor(e_q, method, int(k), profile, factor_quant, _svd_cache)
    return LqerLayer(w_q, corr, act_quant, w)


def forward(layer: LqerLayer, x) -> np.ndarray:
    x = as_matrix(x)
    m, _ = layer.shape
    if x.shape[1] != m:
        raise ShapeError(f"input has {x.shape[1]} channels, layer expects {m}")
    x_q = snap(x, layer.act_quant)
    y = x_q @ layer.w_dq
    if layer.correction is not None:
        y = y + (x_q @ layer.correction.a_k) @ layer.correction.b_k
    return y


def output_error(y_ref, y_approx) -> tuple[float, float]:
    """Relative Frobenius error and max absolute entry-wise error."""
    y_ref = np.asarray(y_ref, dtype=np.float64)
    y_approx = np.asarray(y_approx, dtype=np.float64)
    if y_ref.shape != y_approx.shape:
        raise ShapeError(f"shapes {y_ref.shape} and {y_approx.shape} differ")
    diff = y_ref - y_approx
    rel = frobenius_norm(diff) / max(frobenius_norm(y_ref), 1e-30)
    max_abs = float(np.abs(diff).max()) if diff.size else 0.0
    return rel, max_abs


# synthetic activations ----------------------------------------------------


@dataclass(frozen=True)
class SynthActivationConfig:
    """Gaussian activations with log-normal channel gains and a few outlier channels.

    Channel gains and outlier positions depend only on ``seed``, so different
    ``sample`` indices draw fresh tokens from the same channel statistics.
    """

    channels: int
    tokens: int
    outlier_channels: int = 2
    outlier_gain: float = 100.0
    base_scale_spread: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.channels < 1 or self.tokens < 1:
            raise ArgumentError("channels and tokens must be positive")
        if not 0 <= self.outlier_channels <= self.channels:
            raise ArgumentError("outlier_channels must be in [0, channels]")
        if self.outlier_gain < 1:
            raise ArgumentError("outlier_gain must be >= 1")
        if self.base_scale_spread < 0:
            raise ArgumentError("base_scale_spread must be >= 0")


def channel_gains(cfg: SynthActivationConfig) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([cfg.seed, 0])
    gains = np.exp(cfg.base_scale_spread * rng.standard_normal(cfg.channels))
    outliers = np.sort(rng.permutation(cfg.channels)[: cfg.outlier_channels])
    gains[outliers] *= cfg.outlier_gain
    return gains, outliers


def synth_activations(cfg: SynthActivationConfig, sample: int = 0) -> np.ndarray:
    gains, _ = channel_gains(cfg)
    z = np.random.default_rng([cfg.seed, 1, sample]).standard_normal((cfg.tokens, cfg.channels))
    return z * gains


# harness ------------------------------------------------------------------


@dataclass(frozen=True)
class HarnessLayer:
    weight: np.ndarray
    nonlinearity: str = "none"

    def __post_init__(self):
        if self.nonlinearity not in NONLINEARITIES:
            raise ArgumentError(f"unknown nonlinearity {self.nonlinearity!r}")


@dataclass(frozen=True)
class HarnessConfig:
    weight_quant: QuantConfig
    act_quant: QuantConfig | None = None
    factor_quant: QuantConfig | None = None
    floor_dead: bool = False


@dataclass
class HarnessRecord:
    method: str
    k: int
    layer_errors: list[float] = field(default_factory=list)
    layer_e_a: list[float] = field(default_factory=list)
    end_to_end: float = 0.0


def _activate(y: np.ndarray, nonlinearity: str) -> np.ndarray:
    return np.maximum(y, 0.0) if nonlinearity == "relu" else y


def _check_chain(layers: Sequence[HarnessLayer]) -> None:
    for i in range(1, len(layers)):
        prev, cur = layers[i - 1].weight.shape, layers[i].weight.shape
        if prev[1] != cur[0]:
            raise ShapeError(f"layer {i - 1} outputs {prev[1]} channels but layer {i} expects {cur[0]}")


def reference_chain(layers: Sequence[HarnessLayer], x) -> list[np.ndarray]:
    """Inputs of every layer followed by the final output, in float64."""
    acts = [as_matrix(x)]
    for layer in layers:
        acts.append(_activate(acts[-1] @ layer.weight, layer.nonlinearity))
    return acts


def build_chain(
    layers: Sequence[HarnessLayer],
    method: str,
    k: int,
    calib_samples: Sequence[np.ndarray],
    cfg: HarnessConfig,
    svd_caches: list[dict] | None = None,
) -> list[LqerLayer]:
    """Quantize every layer; L2QER profiles come from the approximate chain's own inputs."""
    _check_chain(layers)
    if method == "l2qer" and not calib_samples:
        raise ArgumentError("method 'l2qer' requires calibration samples")
    built = []
    acts = [as_matrix(s) for s in calib_samples] if method == "l2qer" else []
    for i, layer in enumerate(layers):
        profile = calibrate(acts, floor_dead=cfg.floor_dead) if method == "l2qer" else None
        lq = build_layer(
            layer.weight,
            cfg.weight_quant,
            method,
            k,
            profile,
            cfg.act_quant,
            cfg.factor_quant,
            _svd_cache=None if svd_caches is None else svd_caches[i],
        )
        built.append(lq)
        if method == "l2qer" and i + 1 < len(layers):
            acts = [_activate(forward(lq, a), layer.nonlinearity) for a in acts]
    return built


def evaluate_chain(
    layers: Sequence[HarnessLayer], built: Sequence[LqerLayer], ref_acts: Sequence[np.ndarray]
) -> tuple[list[float], float]:
    """Per-layer errors (each layer fed the reference input) and end-to-end error."""
    per_layer = []
    h = ref_acts[0]
    for i, (layer, lq) in enumerate(zip(layers, built)):
        y_ref = ref_acts[i] @ layer.weight
        per_layer.append(output_error(y_ref, forward(lq, ref_acts[i]))[0])
        h = _activate(forward(lq, h), layer.nonlinearity)
    return per_layer, output_error(ref_acts[-1], h)[0]


def run_harness(
    layers: Sequence[HarnessLayer],
    methods: Sequence[str],
    ks: Sequence[int],
    calib_samples: Sequence[np.ndarray],
    x_eval,
    cfg: HarnessConfig,
) -> list[HarnessRecord]:
    """Evaluate every (method, k) pair on ``x_eval`` against the float64 chain.

    ``plain`` ignores k but is reported once per k so every rank has a full
    row set.
    """
    _check_chain(layers)
    for method in methods:
        if method not in METHODS:
            raise ArgumentError(f"unknown method {method!r}; expected one of {METHODS}")
    ref = reference_chain(layers, x_eval)
    caches = [{} for _ in layers]
    records = []
    plain_cache = None
    for method in methods:
        for k in ks:
            if method == "plain":
                if plain_cache is None:
                    built = build_chain(layers, "plain", 1, calib_samples, cfg)
                    e_a = [float(np.abs(lq.reference_w - lq.w_dq).mean()) for lq in built]
                    plain_cache = (*evaluate_chain(layers, built, ref), e_a)
                per_layer, e2e, e_a = plain_cache
            else:
                built = build_chain(layers, method, k, calib_samples, cfg, caches)
                per_layer, e2e = evaluate_chain(layers, built, ref)
                e_a = [
                    float(np.abs(lq.reference_w - lq.w_dq - lq.correction.product()).mean()) for lq in built
                ]
            records.append(HarnessRecord(method, int(k), list(per_layer), e_a, e2e))
    return records


# standard synthetic scenario ---------------------------------------------


@dataclass(frozen=True)
class Scenario:
    layers: list[HarnessLayer]
    calib_samples: list[np.ndarray]
    x_eval: np.ndarray


def standard_scenario(
    seed: int = 0,
    *,
    width: int = 64,
    depth: int = 2,
    tokens: int = 128,
    n_calib: int = 8,
    outlier_channels: int = 2,
    outlier_gain: float = 100.0,
    spread: float = 0.25,
) -> Scenario:
    """Random ``width x width`` layers fed outlier-heavy activations.

    Every layer's output columns carry the same kind of channel gains as the
    input, so later layers also see outlier channels.
    """
    act_cfg = SynthActivationConfig(width, tokens, outlier_channels, outlier_gain, spread, seed)
    calib = [synth_activations(act_cfg, sample=i + 1) for i in range(n_calib)]
    x_eval = synth_activations(act_cfg, sample=0)
    rng = np.random.default_rng([seed, 2])
    layers = []
    for i in range(depth):
        w = rng.standard_normal((width, width)) / np.sqrt(width)
        if i + 1 < depth:
            # keep outlier channels alive downstream; normalise by the input gains
            out_cfg = SynthActivationConfig(width, 1, outlier_channels, outlier_gain, spread, seed * 1000 + i + 1)
            in_gains = channel_gains(act_cfg)[0] if i == 0 else prev_gains
            out_gains, _ = channel_gains(out_cfg)
            w = w * out_gains / np.sqrt(np.mean(in_gains**2))
            prev_gains = out_gains
        layers.append(HarnessLayer(w, "relu" if i + 1 < depth else "none"))
    return Scenario(layers, calib, x_eval)
