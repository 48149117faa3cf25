"""Low-rank reconstruction of the weight quantization error.

``lqer_factors`` approximates ``E_q = W - dq(W_q)`` by its rank-k truncated
SVD, ``A_k = U_k`` and ``B_k = Sigma_k V_k^T``. ``l2qer_factors`` first
scales the rows of ``E_q`` by the calibration diagonal S, factors ``S E_q``,
and folds ``S^-1`` back into ``A_k``, so the truncation is optimal in the
activation-weighted norm rather than the plain one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .calibration import CalibrationProfile, apply_scale
from .errors import ArgumentError, DegenerateInputError, ShapeError
from .formats import QuantConfig, QuantizedMatrix, dequantize_matrix, factor_config, snap
from .linalg import SvdResult, as_matrix, frobenius_norm, svd, truncate

Method = Literal["lqer", "l2qer"]

DEFAULT_FACTOR_QUANT = factor_config()


def default_rank(weight_bits: int) -> int:
    return 256 if weight_bits <= 2 else 32


@dataclass(frozen=True, eq=False)
class LowRankCorrection:
    a_k: np.ndarray
    b_k: np.ndarray
    method: Method
    factor_quant: QuantConfig | None = None

    def __post_init__(self):
        if self.a_k.ndim != 2 or self.b_k.ndim != 2 or self.a_k.shape[1] != self.b_k.shape[0]:
            raise ShapeError(f"factor shapes {self.a_k.shape} and {self.b_k.shape} do not chain")

    @property
    def rank(self) -> int:
        return self.a_k.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.a_k.shape[0], self.b_k.shape[1]

    def product(self) -> np.ndarray:
        return self.a_k @ self.b_k


@dataclass(frozen=True)
class ErrorReport:
    e_a: float
    rel_frobenius: float
    rank: int


def quant_error(w, w_q: QuantizedMatrix) -> np.ndarray:
    w = as_matrix(w)
    if w.shape != w_q.shape:
        raise ShapeError(f"weight shape {w.shape} does not match quantized shape {w_q.shape}")
    return w - dequantize_matrix(w_q)


def _check_rank(e_q: np.ndarray, k: int) -> int:
    r = min(e_q.shape)
    if isinstance(k, bool) or int(k) != k or not 1 <= k <= r:
        raise ArgumentError(f"rank k must be in [1, {r}], got {k}")
    return int(k)


def _finish(a_k, b_k, method, factor_quant):
    if factor_quant is not None:
        a_k, b_k = snap(a_k, factor_quant), snap(b_k, factor_quant)
    return LowRankCorrection(a_k=a_k, b_k=b_k, method=method, factor_quant=factor_quant)


def _zero(e_q, k, method, factor_quant):
    m, n = e_q.shape
    return LowRankCorrection(np.zeros((m, k)), np.zeros((k, n)), method, factor_quant)


def lqer_from_svd(decomp: SvdResult, k: int, factor_quant: QuantConfig | None = None) -> LowRankCorrection:
    """Rank-k LQER factors from an already computed SVD of ``E_q``."""
    u_k, sigma_k, v_k = truncate(decomp, k)
    if decomp.sigma[0] == 0:
        return _zero(np.empty((u_k.shape[0], v_k.shape[0])), k, "lqer", factor_quant)
    return _finish(u_k, sigma_k[:, None] * v_k.T, "lqer", factor_quant)


def lqer_factors(e_q, k: int, factor_quant: QuantConfig | None = None) -> LowRankCorrection:
    e_q = as_matrix(e_q)
    k = _check_rank(e_q, k)
    if not e_q.any():
        return _zero(e_q, k, "lqer", factor_quant)
    return lqer_from_svd(svd(e_q), k, factor_quant)


def l2qer_from_svd(
    decomp: SvdResult, profile: CalibrationProfile, k: int, factor_quant: QuantConfig | None = None
) -> LowRankCorrection:
    """Rank-k L2QER factors from an already computed SVD of ``S E_q``."""
    u_k, sigma_k, v_k = truncate(decomp, k)
    if decomp.sigma[0] == 0:
        return _zero(np.empty((u_k.shape[0], v_k.shape[0])), k, "l2qer", factor_quant)
    a_k = apply_scale(u_k, profile, "inverse")
    return _finish(a_k, sigma_k[:, None] * v_k.T, "l2qer", factor_quant)


def l2qer_factors(
    e_q, profile: CalibrationProfile, k: int, factor_quant: QuantConfig | None = None
) -> LowRankCorrection:
    e_q = as_matrix(e_q)
    if e_q.shape[0] != profile.channels:
        raise ShapeError(f"error has {e_q.shape[0]} rows but profile has {profile.channels} channels")
    k = _check_rank(e_q, k)
    if not e_q.any():
        return _zero(e_q, k, "l2qer", factor_quant)
    return l2qer_from_svd(svd(apply_scale(e_q, profile, "forward")), profile, k, factor_quant)


def approximation_error(e_q, corr: LowRankCorrection) -> ErrorReport:
    """Mean absolute residual ``e_a`` and relative Frobenius residual."""
    e_q = as_matrix(e_q)
    if corr.shape != e_q.shape:
        raise ShapeError(f"correction shape {corr.shape} does not match error shape {e_q.shape}")
    resid = e_q - corr.product()
    e_a = float(np.abs(resid).sum() / resid.size)
    denom = frobenius_norm(e_q)
    num = frobenius_norm(resid)
    if denom == 0:
        rel = 0.0 if num == 0 else float("inf")
    else:
        rel = num / denom
    return ErrorReport(e_a=e_a, rel_frobenius=rel, rank=corr.rank)


def normalized_spectra(e_q, profile: CalibrationProfile) -> tuple[np.ndarray, np.ndarray]:
    """Singular values of ``alpha * E_q`` and of ``S E_q``.

    ``alpha = ||S E_q||_F / ||E_q||_F`` so both spectra carry the same energy
    and their decay can be compared directly.
    """
    e_q = as_matrix(e_q)
    if e_q.shape[0] != profile.channels:
        raise ShapeError(f"error has {e_q.shape[0]} rows but profile has {profile.channels} channels")
    plain_norm = frobenius_norm(e_q)
    if plain_norm == 0:
        raise DegenerateInputError("quantization error is identically zero; spectra are undefined")
    scaled = apply_scale(e_q, profile, "forward")
    alpha = frobenius_norm(scaled) / plain_norm
    return svd(alpha * e_q).sigma, svd(scaled).sigma


def energy_fraction(sigma: np.ndarray, top: int) -> float:
    energy = np.asarray(sigma, dtype=np.float64) ** 2
    return float(energy[:top].sum() / energy.sum())
