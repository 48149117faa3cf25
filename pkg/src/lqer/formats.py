"""Number-format simulation: MXINT block floating point and grouped integers.

Quantization is simulated by snapping values onto the format's grid; all
arithmetic stays in float64. Blocks run either along a row (``[1, B]``,
used for activations) or down a column (``[B, 1]``, used for weights and
low-rank factors). A ragged final block is quantized at its natural length.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Literal

import numpy as np

from .errors import ArgumentError, ShapeError
from .linalg import as_matrix

Kind = Literal["mxint", "int"]
Orientation = Literal["row", "col"]

SCALE_BITS = 16  # storage cost of an int group scale


@dataclass(frozen=True)
class QuantConfig:
    """Format parameters.

    ``orientation="row"`` tiles blocks of ``block_size`` consecutive entries
    along each row (``[1, B]``); ``"col"`` tiles them down each column
    (``[B, 1]``). ``exponent_bits`` is ignored for ``kind="int"``.
    """

    kind: Kind = "mxint"
    mantissa_bits: int = 4
    exponent_bits: int = 4
    block_size: int = 16
    orientation: Orientation = "col"

    def __post_init__(self):
        if self.kind not in ("mxint", "int"):
            raise ArgumentError(f"unknown format kind {self.kind!r}")
        if self.orientation not in ("row", "col"):
            raise ArgumentError(f"unknown block orientation {self.orientation!r}")
        if not 2 <= self.mantissa_bits <= 8:
            raise ArgumentError(f"mantissa_bits must be in [2, 8], got {self.mantissa_bits}")
        if self.kind == "mxint" and not 2 <= self.exponent_bits <= 8:
            raise ArgumentError(f"exponent_bits must be in [2, 8], got {self.exponent_bits}")
        if self.block_size < 1:
            raise ArgumentError(f"block_size must be >= 1, got {self.block_size}")

    @property
    def exponent_range(self) -> tuple[int, int]:
        half = 1 << (self.exponent_bits - 1)
        return -half, half - 1

    @property
    def bits_per_element(self) -> Fraction:
        overhead = self.exponent_bits if self.kind == "mxint" else SCALE_BITS
        return Fraction(self.mantissa_bits) + Fraction(overhead, self.block_size)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "mantissa_bits": self.mantissa_bits,
            "exponent_bits": self.exponent_bits,
            "block_size": self.block_size,
            "orientation": self.orientation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantConfig":
        return cls(**d)


def weight_config(bits: int = 4) -> QuantConfig:
    """MXINT weights: 4-bit shared exponent, ``[16, 1]`` blocks."""
    return QuantConfig("mxint", bits, 4, 16, "col")


def factor_config(bits: int = 8) -> QuantConfig:
    return QuantConfig("mxint", bits, 4, 16, "col")


def activation_config(bits: int = 8) -> QuantConfig:
    """MXINT activations: 8-bit shared exponent, ``[1, 16]`` blocks."""
    return QuantConfig("mxint", bits, 8, 16, "row")


def _mxint_rows(x: np.ndarray, b: int, e_bits: int) -> tuple[np.ndarray, np.ndarray]:
    # x: (..., B); returns exponents (...,) and mantissas (..., B)
    peak = np.max(np.abs(x), axis=-1)
    _, p = np.frexp(peak)
    lo, hi = -(1 << (e_bits - 1)), (1 << (e_bits - 1)) - 1
    exp = np.where(peak > 0, p.astype(np.int64) - 1, lo)
    exp = np.clip(exp, lo, hi)
    scaled = np.ldexp(x, -(exp - (b - 2))[..., None])
    # symmetric saturation keeps re-quantization from bumping the exponent
    qmax = (1 << (b - 1)) - 1
    mant = np.clip(np.rint(scaled), -qmax, qmax).astype(np.int64)
    return exp, mant


def _int_rows(x: np.ndarray, b: int) -> tuple[np.ndarray, np.ndarray]:
    qmax = (1 << (b - 1)) - 1
    peak = np.max(np.abs(x), axis=-1)
    # a subnormal peak would underflow peak / qmax to zero
    scale = np.where(peak > 0, np.maximum(peak / qmax, np.finfo(np.float64).smallest_subnormal), 1.0)
    q = np.clip(np.rint(x / scale[..., None]), -qmax, qmax).astype(np.int64)
    return scale, q


def mxint_quantize_block(x, b: int, e_bits: int) -> tuple[int, np.ndarray]:
    """Quantize one block to a shared exponent and signed mantissas.

    The exponent is ``floor(log2(max|x|))`` clamped to the ``e_bits`` range,
    and each mantissa is ``x / 2**(exponent - (b - 2))`` rounded half-to-even.
    An all-zero block gets the minimum exponent.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0 or not np.all(np.isfinite(x)):
        raise ArgumentError("block must be a non-empty finite vector")
    exp, mant = _mxint_rows(x[None, :], b, e_bits)
    return int(exp[0]), mant[0]


def mxint_dequantize_block(exponent: int, mantissas, b: int) -> np.ndarray:
    m = np.asarray(mantissas, dtype=np.float64)
    return np.ldexp(m, int(exponent) - (b - 2))


def int_group_quantize(x, b: int) -> tuple[float, np.ndarray]:
    """Symmetric grouped integer quantization: ``s = max|x| / (2**(b-1) - 1)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0 or not np.all(np.isfinite(x)):
        raise ArgumentError("group must be a non-empty finite vector")
    scale, q = _int_rows(x[None, :], b)
    return float(scale[0]), q[0]


def int_group_dequantize(scale: float, q) -> np.ndarray:
    return float(scale) * np.asarray(q, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class QuantizedMatrix:
    """Quantized representation of a matrix.

    ``mantissas`` has the matrix's shape. ``scales`` holds one entry per
    block: shape ``(rows, nblocks)`` for row orientation, ``(nblocks, cols)``
    for column orientation. For MXINT the entries are integer shared
    exponents, for int they are real group scales.
    """

    config: QuantConfig
    mantissas: np.ndarray
    scales: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.mantissas.shape

    @property
    def rows(self) -> int:
        return self.mantissas.shape[0]

    @property
    def cols(self) -> int:
        return self.mantissas.shape[1]

    def __eq__(self, other):
        if not isinstance(other, QuantizedMatrix):
            return NotImplemented
        return (
            self.config == other.config
            and np.array_equal(self.mantissas, other.mantissas)
            and self.scales.dtype.kind == other.scales.dtype.kind
            and np.array_equal(self.scales, other.scales)
        )


def _blocked(w: np.ndarray, block: int) -> tuple[np.ndarray, int]:
    # rows of w split into blocks of `block` entries, zero-padded at the tail;
    # zero padding changes neither block max nor any real element's rounding
    rows, cols = w.shape
    nblocks = -(-cols // block)
    padded = np.zeros((rows, nblocks * block))
    padded[:, :cols] = w
    return padded.reshape(rows, nblocks, block), nblocks


def quantize_matrix(w, cfg: QuantConfig) -> QuantizedMatrix:
    w = as_matrix(w)
    work = w if cfg.orientation == "row" else w.T
    rows, cols = work.shape
    blocks, _ = _blocked(work, cfg.block_size)
    if cfg.kind == "mxint":
        scales, mant = _mxint_rows(blocks, cfg.mantissa_bits, cfg.exponent_bits)
    else:
        scales, mant = _int_rows(blocks, cfg.mantissa_bits)
    mant = mant.reshape(rows, -1)[:, :cols].astype(np.int8)
    scales = scales.astype(np.int8) if cfg.kind == "mxint" else scales.astype(np.float64)
    if cfg.orientation == "col":
        mant, scales = mant.T, scales.T
    return QuantizedMatrix(cfg, np.ascontiguousarray(mant), np.ascontiguousarray(scales))


def dequantize_matrix(q: QuantizedMatrix) -> np.ndarray:
    cfg = q.config
    mant, scales = q.mantissas, q.scales
    if cfg.orientation == "col":
        mant, scales = mant.T, scales.T
    # broadcast each block's scale over its members
    per_elem = np.repeat(scales, cfg.block_size, axis=1)[:, : mant.shape[1]]
    if cfg.kind == "mxint":
        out = np.ldexp(mant.astype(np.float64), per_elem.astype(np.int64) - (cfg.mantissa_bits - 2))
    else:
        out = mant.astype(np.float64) * per_elem
    return np.ascontiguousarray(out.T if cfg.orientation == "col" else out)


def snap(x, cfg: QuantConfig | None) -> np.ndarray:
    """Quantize-dequantize round trip; identity when ``cfg`` is None."""
    if cfg is None:
        return as_matrix(x)
    return dequantize_matrix(quantize_matrix(x, cfg))


def element_error_bound(q: QuantizedMatrix) -> np.ndarray:
    """Per-element half-step bound for non-saturating entries."""
    cfg = q.config
    scales = q.scales.T if cfg.orientation == "col" else q.scales
    cols = q.cols if cfg.orientation == "row" else q.rows
    per_elem = np.repeat(scales, cfg.block_size, axis=1)[:, :cols]
    if cfg.kind == "mxint":
        step = np.ldexp(1.0, per_elem.astype(np.int64) - (cfg.mantissa_bits - 2))
    else:
        step = per_elem.astype(np.float64)
    step = step / 2
    return step.T if cfg.orientation == "col" else step


def saturated(q: QuantizedMatrix) -> np.ndarray:
    """Mask of entries clamped at the largest mantissa magnitude.

    Only these may exceed :func:`element_error_bound`; their dequantized
    magnitude is the largest representable one for the block.
    """
    return np.abs(q.mantissas.astype(np.int64)) == (1 << (q.config.mantissa_bits - 1)) - 1


def avg_bitwidth(cfg_low: QuantConfig, dims: tuple[int, int], k: int, cfg_high: QuantConfig | None = None) -> float:
    """Average stored bits per weight of ``W_q`` plus the two rank-``k`` factors."""
    return float(avg_bitwidth_exact(cfg_low, dims, k, cfg_high))


def avg_bitwidth_exact(cfg_low: QuantConfig, dims: tuple[int, int], k: int, cfg_high: QuantConfig | None = None) -> Fraction:
    m, n = dims
    if m < 1 or n < 1:
        raise ArgumentError(f"dims must be positive, got {dims}")
    if k < 0:
        raise ArgumentError(f"k must be >= 0, got {k}")
    if k > 0 and cfg_high is None:
        cfg_high = factor_config()
    total = m * n * cfg_low.bits_per_element
    if k:
        total += (m + n) * k * cfg_high.bits_per_element
    return total / (m * n)


def overhead_fraction(dims: tuple[int, int], k: int) -> float:
    """Extra high-precision multiplies of the low-rank path relative to ``m*n``."""
    m, n = dims
    if m < 1 or n < 1 or k < 1:
        raise ArgumentError(f"dims and k must be positive, got {dims}, k={k}")
    return (m + n) * k / (m * n)


def check_shape(a: np.ndarray, shape: tuple[int, int], what: str) -> None:
    if a.shape != tuple(shape):
        raise ShapeError(f"{what}: expected shape {tuple(shape)}, got {a.shape}")
