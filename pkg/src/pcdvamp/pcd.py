"""Parameter convergence detector (PCD).

PCD estimates the recovery-error variance of the non-sparse estimate ``r``
from the cells it currently believes are empty, re-detects at a preset rate
``pfa0`` with the refreshed variance, and repeats until the estimate stops
moving. The converged variance then sets a Rayleigh threshold for the
requested final false-alarm rate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DegenerateSupportError, InvalidParameterError
from .signal_model import amplitude, split_real_imag


@dataclass(frozen=True)
class PcdConfig:
    pfa0: float = 1e-3
    pfa: float = 1e-2
    c_tol: float = 1e-5
    m_max: int = 50

    def __post_init__(self):
        if not (0 < self.pfa0 < 1):
            raise InvalidParameterError("pfa0 must lie in (0, 1)")
        if not (0 < self.pfa <= 1):
            raise InvalidParameterError("pfa must lie in (0, 1]")
        if not self.c_tol > 0:
            raise InvalidParameterError("c_tol must be positive")
        if self.m_max < 1:
            raise InvalidParameterError("m_max must be at least 1")


@dataclass(eq=False)
class PcdResult:
    sigma2_pcd: float
    threshold: float
    x_hat_pfa: np.ndarray
    detected_support: np.ndarray
    variance_trace: list[float]
    iterations: int
    converged: bool
    # per iteration: (m, sigma2_hat, pfa0 threshold or final threshold, detected count)
    history: list[tuple[int, float, float, int]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# densities


def bessel_i0(x):
    """Zeroth-order modified Bessel function of the first kind."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise InvalidParameterError("bessel_i0 requires x >= 0")
    out = special.i0(x)
    return float(out) if out.ndim == 0 else out


def _check_sigma2(sigma2):
    if not np.all(np.asarray(sigma2) > 0):
        raise InvalidParameterError("sigma2 must be positive")


def rayleigh_pdf(r, sigma2):
    """``r / sigma2 * exp(-r^2 / (2 sigma2))``."""
    _check_sigma2(sigma2)
    r = np.asarray(r, dtype=float)
    return r / sigma2 * np.exp(-r * r / (2.0 * sigma2))


def rician_pdf(r, mu, sigma2):
    """``r / sigma2 * exp(-(r^2 + mu^2) / (2 sigma2)) * I0(mu r / sigma2)``.

    Evaluated through the exponentially scaled ``i0e`` so large arguments do
    not overflow.
    """
    _check_sigma2(sigma2)
    r = np.asarray(r, dtype=float)
    z = mu * r / sigma2
    return r / sigma2 * np.exp(-((r - mu) ** 2) / (2.0 * sigma2)) * special.i0e(z)


# ---------------------------------------------------------------------------
# thresholds


def threshold_for_pfa(sigma2: float, pfa: float) -> float:
    """Rayleigh tail threshold ``sqrt(-2 sigma2 ln pfa)``."""
    if not sigma2 > 0:
        raise InvalidParameterError("sigma2 must be positive")
    if not (0 < pfa <= 1):
        raise InvalidParameterError(f"pfa must lie in (0, 1], got {pfa}")
    return math.sqrt(-2.0 * sigma2 * math.log(pfa))


def pfa_for_threshold(sigma2: float, T: float) -> float:
    """Rayleigh tail probability ``exp(-T^2 / (2 sigma2))``."""
    if not sigma2 > 0:
        raise InvalidParameterError("sigma2 must be positive")
    if T < 0:
        raise InvalidParameterError("threshold must be non-negative")
    return math.exp(-T * T / (2.0 * sigma2))


def detect(r: np.ndarray, T: float) -> tuple[np.ndarray, np.ndarray]:
    """Keep amplitudes strictly above ``T``; return (masked amplitudes, support)."""
    if T < 0:
        raise InvalidParameterError("threshold must be non-negative")
    r = np.asarray(r, dtype=float)
    mask = r > T
    return np.where(mask, r, 0.0), np.flatnonzero(mask)


# ---------------------------------------------------------------------------
# variance estimation


def residual_variance(r_RI: np.ndarray, detected_cells) -> tuple[float, int]:
    """Unbiased variance of both real coordinates of every undetected cell.

    Returns ``(sigma2_hat, L)`` where ``L = 2 * (N - |detected|)``.
    """
    r_R, r_I = split_real_imag(np.asarray(r_RI, dtype=float))
    keep = np.ones(r_R.shape[0], dtype=bool)
    keep[np.asarray(detected_cells, dtype=int)] = False
    x_s = np.concatenate([r_R[keep], r_I[keep]])
    L = x_s.size
    if L < 2:
        raise DegenerateSupportError(f"only {L} residual coordinates left after removing detections")
    return float(np.var(x_s, ddof=1)), L


def cell_support(x_hat_RI: np.ndarray) -> np.ndarray:
    """Cells where either real coordinate of the sparse solution is nonzero."""
    x_R, x_I = split_real_imag(np.asarray(x_hat_RI))
    return np.flatnonzero((x_R != 0) | (x_I != 0))


def run_pcd(x_hat_RI: np.ndarray, r_RI: np.ndarray, config: PcdConfig) -> PcdResult:
    """Iterate variance estimation and re-detection until the variance settles."""
    r_RI = np.asarray(r_RI, dtype=float)
    if r_RI.shape != np.shape(x_hat_RI) or r_RI.ndim != 1:
        raise InvalidParameterError("x_hat_RI and r_RI must be vectors of equal length")
    r = amplitude(r_RI)
    support = cell_support(x_hat_RI)
    prev = 0.0
    trace: list[float] = []
    history = []
    for m in range(1, config.m_max + 1):
        s2, _ = residual_variance(r_RI, support)
        if s2 <= 0:
            raise DegenerateSupportError("residual coordinates have zero variance")
        trace.append(s2)
        converged = abs(s2 - prev) < config.c_tol * prev
        if converged or m == config.m_max:
            T = threshold_for_pfa(s2, config.pfa)
            x_pfa, detected = detect(r, T)
            history.append((m, s2, T, int(detected.size)))
            return PcdResult(s2, T, x_pfa, detected, trace, m, bool(converged), history)
        T0 = threshold_for_pfa(s2, config.pfa0)
        _, support = detect(r, T0)
        history.append((m, s2, T0, int(support.size)))
        prev = s2
    raise AssertionError("unreachable")  # loop always returns at m_max


def write_pcd_csv(path, result: PcdResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "sigma2_hat", "threshold", "detected_count"])
        for m, s2, T, count in result.history:
            w.writerow([m, repr(s2), repr(T), count])
        w.writerow(["summary", repr(result.sigma2_pcd), repr(result.threshold),
                    int(result.detected_support.size)])
