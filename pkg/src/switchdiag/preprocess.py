"""Signal conditioning: wavelet denoising, interference removal, min-max scaling."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pywt

from .features import N_FEATURES

WAVELET = "db4"
# median(|N(0,1)|), converts MAD to a Gaussian sigma estimate
_MAD_SCALE = 0.6744897501960817


class PreprocessError(ValueError):
    pass


@dataclass(frozen=True)
class NormStats:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.array(self.min, dtype=np.float64).reshape(-1)
        hi = np.array(self.max, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise PreprocessError("min/max length mismatch")
        if np.any(lo > hi):
            raise PreprocessError("min exceeds max")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    def to_dict(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.array(d["min"]), np.array(d["max"]))


def _soft(x: np.ndarray, thr: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - thr, 0.0)


def wavelet_denoise(series, levels: int = 2, threshold_rule: str = "universal") -> np.ndarray:
    """Soft-threshold the detail coefficients of a periodized db4 decomposition.

    Noise scale comes from the MAD of the finest details; the threshold is
    ``sigma * sqrt(2 ln n)``. Approximation coefficients are left untouched.
    """
    if threshold_rule != "universal":
        raise PreprocessError(f"unknown threshold rule {threshold_rule!r}")
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    if levels < 1:
        raise PreprocessError("levels must be >= 1")
    n = x.size
    if n < 2 ** levels:
        raise PreprocessError(f"series of length {n} too short for {levels} levels (need {2 ** levels})")
    if not np.all(np.isfinite(x)):
        raise PreprocessError("non-finite sample in series")
    if n == 0 or np.ptp(x) == 0.0:
        return x.copy()

    block = 2 ** levels
    padded = np.pad(x, (0, (-n) % block), mode="edge")
    with warnings.catch_warnings():
        # short series: boundary effects are expected under periodization
        warnings.simplefilter("ignore", UserWarning)
        coeffs = pywt.wavedec(padded, WAVELET, mode="periodization", level=levels)
        sigma = np.median(np.abs(coeffs[-1])) / _MAD_SCALE
        thr = sigma * np.sqrt(2.0 * np.log(padded.size))
        coeffs = [coeffs[0]] + [_soft(d, thr) for d in coeffs[1:]]
        out = pywt.waverec(coeffs, WAVELET, mode="periodization")
    return out[:n]


def interference_mask(series, deriv_threshold: float) -> np.ndarray:
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    d = np.abs(np.diff(x))
    mask = np.zeros(x.size, dtype=bool)
    mask[1:-1] = (d[:-1] > deriv_threshold) & (d[1:] > deriv_threshold)
    return mask


def remove_interference(series, deriv_threshold: float) -> np.ndarray:
    """Replace isolated derivative spikes with a linear bridge.

    A point is flagged when the jumps on both of its sides exceed the
    threshold, so one-sided steps survive. Endpoints are never flagged.
    """
    if not deriv_threshold > 0:
        raise PreprocessError("deriv_threshold must be positive")
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    if x.size < 3:
        raise PreprocessError("series must have at least 3 points")
    mask = interference_mask(x, deriv_threshold)
    if not mask.any():
        return x.copy()
    if mask[1:-1].all():
        raise PreprocessError("series unusable: every interior point flagged as interference")
    idx = np.arange(x.size)
    out = x.copy()
    out[mask] = np.interp(idx[mask], idx[~mask], x[~mask])
    return out


def normalize(matrix, stats: NormStats | None = None) -> tuple[np.ndarray, NormStats]:
    """Per-column min-max scaling to [0, 1].

    Constant columns map to 0.5. When ``stats`` are supplied (inference),
    results are clipped into [0, 1].
    """
    X = np.asarray(matrix, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if stats is None:
        if X.shape[0] < 2:
            raise PreprocessError("need at least 2 rows to estimate normalization statistics")
        stats = NormStats(X.min(axis=0), X.max(axis=0))
    if X.shape[1] != stats.min.size:
        raise PreprocessError(f"expected {stats.min.size} columns, got {X.shape[1]}")
    span = stats.max - stats.min
    flat = span == 0.0
    safe = np.where(flat, 1.0, span)
    Y = (X - stats.min) / safe
    Y[:, flat] = 0.5
    np.clip(Y, 0.0, 1.0, out=Y)
    return Y, stats


def identity_stats(dim: int = N_FEATURES) -> NormStats:
    return NormStats(np.zeros(dim), np.ones(dim))
