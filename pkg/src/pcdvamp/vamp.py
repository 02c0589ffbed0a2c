"""Vector AMP in the real formulation with a soft-threshold denoiser.

Every routine accepts either a single real-formulation vector of length 2N
or a ``(2N, D)`` batch whose columns are independent problems sharing the
same observation matrix. Per-problem scalars (divergences, variances) are
then arrays of shape ``(D,)``.

Each iteration runs an LMMSE stage followed by a shrinkage stage, with
extrinsic updates in between::

    x~, v~ = lmmse(r~; sigma~, sigma_w)
    r      = (x~ - v~ r~) / (1 - v~),    sigma^2  = sigma~^2 v~ / (1 - v~)
    x^, v  = soft(r; theta sigma)
    r~'    = (x^ - v r) / (1 - v),       sigma~'^2 = sigma^2 v / (1 - v)
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidParameterError, NumericalFailureError
from .signal_model import ObservationModel

DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class VampLayerParams:
    sigma_w: float
    theta: float

    def __post_init__(self):
        for name in ("sigma_w", "theta"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise InvalidParameterError(f"{name} must be positive and finite, got {val!r}")


@dataclass(frozen=True, eq=False)
class VampConfig:
    T: int
    r1_init: np.ndarray | None = None
    sigma1_init: float | None = None
    v_clamp_eps: float = DEFAULT_EPS
    early_stop_tol: float | None = None

    def __post_init__(self):
        if self.T < 1:
            raise InvalidParameterError("T must be at least 1")
        if not (0 < self.v_clamp_eps < 0.5):
            raise InvalidParameterError("v_clamp_eps must lie in (0, 0.5)")
        if self.sigma1_init is not None and not self.sigma1_init > 0:
            raise InvalidParameterError("sigma1_init must be positive")


@dataclass(eq=False)
class VampOutput:
    x_hat_RI: np.ndarray
    r_RI: np.ndarray
    sigma2_vamp: np.ndarray | float
    trace: list[dict] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.trace)


class LmmseFactor:
    """SVD of ``A_RI`` so each LMMSE solve costs two thin matrix products.

    With ``A_RI = U S V^T`` and precisions ``gw = sigma_w^-2``, ``g = sigma~^-2``::

        (gw A^T A + g I)^-1 b = b / g + V [(1/(gw s^2 + g) - 1/g) * (V^T b)]
    """

    def __init__(self, A_RI: np.ndarray):
        try:
            U, s, Vt = np.linalg.svd(A_RI, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailureError("SVD of the observation matrix failed") from exc
        self.A_RI = A_RI
        self.U, self.s, self.Vt = U, s, Vt
        self.s2 = s * s
        self.n = A_RI.shape[1]

    @classmethod
    def from_model(cls, model: ObservationModel) -> "LmmseFactor":
        return _factor_for(model)

    def At(self, y: np.ndarray) -> np.ndarray:
        return self.A_RI.T @ y

    def solve(self, b: np.ndarray, gamma_w, gamma) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(gw A^T A + g I)^-1 b`` and the average diagonal times ``g``."""
        gamma_w = np.asarray(gamma_w, dtype=float)
        gamma = np.asarray(gamma, dtype=float)
        if b.ndim == 2:
            cols = (b.shape[1],)
            gamma_w = np.broadcast_to(gamma_w, cols)
            gamma = np.broadcast_to(gamma, cols)
            d = 1.0 / (self.s2[:, None] * gamma_w + gamma)
        else:
            d = 1.0 / (gamma_w * self.s2 + gamma)
        coeff = self.Vt @ b
        x = b / gamma + self.Vt.T @ ((d - 1.0 / gamma) * coeff)
        tr = d.sum(axis=0) + (self.n - self.s2.size) / gamma
        v = gamma * tr / self.n
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise NumericalFailureError("LMMSE solve produced non-finite values")
        return x, v


_FACTOR_ATTR = "_lmmse_factor"


def _factor_for(model: ObservationModel) -> LmmseFactor:
    fac = model.__dict__.get(_FACTOR_ATTR)
    if fac is None:
        fac = LmmseFactor(model.A_RI)
        model.__dict__[_FACTOR_ATTR] = fac
    return fac


# ---------------------------------------------------------------------------
# building blocks


def soft_threshold(r: np.ndarray, lam) -> np.ndarray:
    """``sgn(r) * max(|r| - lam, 0)`` element-wise."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise InvalidParameterError("threshold must be non-negative")
    r = np.asarray(r, dtype=float)
    return np.sign(r) * np.maximum(np.abs(r) - lam, 0.0)


def shrink(r: np.ndarray, sigma, theta) -> tuple[np.ndarray, np.ndarray | float]:
    """Soft-threshold at ``theta * sigma``; ``v`` is the fraction of survivors (unclamped)."""
    sigma = np.asarray(sigma, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(sigma <= 0) or np.any(theta <= 0):
        raise InvalidParameterError("sigma and theta must be positive")
    lam = theta * sigma
    x_hat = soft_threshold(r, lam)
    v = np.mean(np.abs(r) > lam, axis=0)
    return x_hat, (float(v) if np.ndim(v) == 0 else v)


def clamp(v, eps: float = DEFAULT_EPS):
    out = np.clip(v, eps, 1.0 - eps)
    return float(out) if np.ndim(out) == 0 else out


def lmmse_denoise(r_tilde, sigma_tilde, sigma_w, model: ObservationModel, y_RI,
                  factor: LmmseFactor | None = None, At_y=None):
    """LMMSE estimate of ``x`` from ``y_RI`` with prior mean ``r_tilde``.

    Returns ``(x_tilde, v_tilde)`` with ``v_tilde`` the average diagonal of
    ``d x_tilde / d r_tilde`` (unclamped).
    """
    sigma_tilde = np.asarray(sigma_tilde, dtype=float)
    sigma_w = np.asarray(sigma_w, dtype=float)
    if np.any(sigma_tilde <= 0) or np.any(sigma_w <= 0):
        raise InvalidParameterError("sigma_tilde and sigma_w must be positive")
    fac = factor if factor is not None else _factor_for(model)
    if At_y is None:
        At_y = fac.At(np.asarray(y_RI, dtype=float))
    gamma = 1.0 / sigma_tilde**2
    gamma_w = 1.0 / sigma_w**2
    b = gamma_w * At_y + gamma * r_tilde
    x, v = fac.solve(b, gamma_w, gamma)
    return x, (float(v) if np.ndim(v) == 0 else v)


def extrinsic_update(x, v, r, sigma2, eps: float = DEFAULT_EPS):
    """``((x - v r) / (1 - v), sigma2 v / (1 - v))``; ``v`` must already be clamped."""
    v_arr = np.asarray(v, dtype=float)
    if np.any(v_arr < eps * (1 - 1e-12)) or np.any(v_arr > (1.0 - eps) * (1 + 1e-12)):
        raise InvalidParameterError(f"divergence {v!r} outside clamped range [{eps}, {1 - eps}]")
    r_next = (x - v_arr * r) / (1.0 - v_arr)
    sigma2_next = np.asarray(sigma2) * v_arr / (1.0 - v_arr)
    return r_next, (float(sigma2_next) if np.ndim(sigma2_next) == 0 else sigma2_next)


# ---------------------------------------------------------------------------
# full iteration


@dataclass(eq=False)
class LayerResult:
    x_tilde: np.ndarray
    v_tilde: np.ndarray
    v_tilde_raw: np.ndarray
    r: np.ndarray
    sigma2: np.ndarray
    x_hat: np.ndarray
    v: np.ndarray
    v_raw: np.ndarray
    r_tilde_next: np.ndarray
    sigma2_tilde_next: np.ndarray
    sigma2_tilde: np.ndarray


def initial_state(y_RI, model: ObservationModel, config: VampConfig | None = None,
                  factor: LmmseFactor | None = None):
    """``(r~_1, sigma~_1^2, A^T y)`` using ``A^T y`` and ``max(var(y), 1e-6)`` by default."""
    fac = factor if factor is not None else _factor_for(model)
    y_RI = np.asarray(y_RI, dtype=float)
    At_y = fac.At(y_RI)
    if config is not None and config.r1_init is not None:
        r1 = np.broadcast_to(np.asarray(config.r1_init, dtype=float), At_y.shape).copy()
    else:
        r1 = At_y.copy()
    if config is not None and config.sigma1_init is not None:
        s2 = np.full(y_RI.shape[1:], float(config.sigma1_init) ** 2) if y_RI.ndim == 2 \
            else float(config.sigma1_init) ** 2
    else:
        s2 = np.maximum(np.var(y_RI, axis=0), 1e-6)
        s2 = float(s2) if np.ndim(s2) == 0 else s2
    return r1, s2, At_y


def vamp_layer(r_tilde, sigma2_tilde, At_y, factor: LmmseFactor, params: VampLayerParams,
               eps: float = DEFAULT_EPS) -> LayerResult:
    """One LMMSE + shrinkage iteration from state ``(r~, sigma~^2)``."""
    sigma2_tilde = np.asarray(sigma2_tilde, dtype=float)
    gamma = 1.0 / sigma2_tilde
    gamma_w = 1.0 / params.sigma_w**2
    x_tilde, vt_raw = factor.solve(gamma_w * At_y + gamma * r_tilde, gamma_w, gamma)
    vt = np.clip(vt_raw, eps, 1.0 - eps)
    r = (x_tilde - vt * r_tilde) / (1.0 - vt)
    sigma2 = sigma2_tilde * vt / (1.0 - vt)
    lam = params.theta * np.sqrt(sigma2)
    x_hat = soft_threshold(r, lam)
    v_raw = np.mean(np.abs(r) > lam, axis=0)
    v = np.clip(v_raw, eps, 1.0 - eps)
    r_tilde_next = (x_hat - v * r) / (1.0 - v)
    sigma2_tilde_next = sigma2 * v / (1.0 - v)
    return LayerResult(x_tilde, vt, vt_raw, r, sigma2, x_hat, v, v_raw,
                       r_tilde_next, sigma2_tilde_next, sigma2_tilde)


def _scalar(a):
    return float(a) if np.ndim(a) == 0 else np.array(a, copy=True)


def run_vamp(y_RI, model: ObservationModel, layer_params, config: VampConfig,
             factor: LmmseFactor | None = None) -> VampOutput:
    """Run ``config.T`` VAMP iterations with per-layer ``(sigma_w, theta)``.

    The returned ``sigma2_vamp`` is the algorithm's own variance for the final
    non-sparse estimate, ``sigma~_T^2 v~_T / (1 - v~_T)``.
    """
    layer_params = list(layer_params)
    if len(layer_params) != config.T:
        raise InvalidParameterError(f"expected {config.T} layer parameter sets, got {len(layer_params)}")
    fac = factor if factor is not None else _factor_for(model)
    r_tilde, s2_tilde, At_y = initial_state(y_RI, model, config, fac)
    eps = config.v_clamp_eps
    trace = []
    prev_x = None
    layer = None
    for t, params in enumerate(layer_params, start=1):
        layer = vamp_layer(r_tilde, s2_tilde, At_y, fac, params, eps)
        trace.append({
            "t": t,
            "v": _scalar(layer.v),
            "v_tilde": _scalar(layer.v_tilde),
            "v_raw": _scalar(layer.v_raw),
            "v_tilde_raw": _scalar(layer.v_tilde_raw),
            "sigma2": _scalar(layer.sigma2),
            "sigma2_tilde": _scalar(layer.sigma2_tilde),
        })
        r_tilde, s2_tilde = layer.r_tilde_next, layer.sigma2_tilde_next
        if config.early_stop_tol is not None and prev_x is not None:
            num = np.linalg.norm(layer.x_hat - prev_x, axis=0)
            den = np.maximum(np.linalg.norm(prev_x, axis=0), np.finfo(float).tiny)
            if np.all(num / den < config.early_stop_tol):
                break
        prev_x = layer.x_hat
    return VampOutput(layer.x_hat, layer.r, _scalar(layer.sigma2), trace)


def write_trace_csv(path, trace: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "v", "v_tilde", "sigma2", "sigma2_tilde"])
        for row in trace:
            w.writerow([row["t"], repr(row["v"]), repr(row["v_tilde"]),
                        repr(row["sigma2"]), repr(row["sigma2_tilde"])])
