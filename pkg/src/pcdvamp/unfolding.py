"""Greedy layer-wise learning of the unfolded VAMP parameters.

Each layer owns two scalars, ``sigma_w`` and ``theta``. Layer ``t`` is fitted
with layers ``1..t-1`` frozen by minimising the batch MSE of the sparse
output of layer ``t``. With only two scalars per layer the search is
derivative-free: coordinate grid sweeps in log-space with successive zoom,
optionally polished by Nelder-Mead.
"""

from __future__ import annotations

import json
import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .errors import InvalidParameterError, InvalidShapeError, ParamsFormatError
from .seeding import derive_seed, make_rng
from .signal_model import ObservationModel, SceneParams, generate_scene, measure
from .vamp import (DEFAULT_EPS, LmmseFactor, VampConfig, VampLayerParams, initial_state,
                   run_vamp, soft_threshold, vamp_layer)

log = logging.getLogger(__name__)

PARAMS_VERSION = 1
OPTIMIZERS = ("coordinate-grid-refine", "nelder-mead")


@dataclass(frozen=True)
class TrainConfig:
    T: int = 7
    k_epoch: int = 8
    batch_size: int = 32
    sigma_w_init: float | None = None  # None: noise std at the SNR midpoint
    theta_init: float = 1.0
    optimizer: str = "coordinate-grid-refine"
    sigma_w_bounds: tuple[float, float] | None = None  # None: init / 10 .. init * 10
    theta_bounds: tuple[float, float] = (0.05, 5.0)
    grid_points: int = 9
    zoom_levels: int = 4
    sweeps: int = 2
    seed: int = 0
    v_clamp_eps: float = DEFAULT_EPS

    def __post_init__(self):
        if self.T < 1 or self.k_epoch < 0 or self.batch_size < 1:
            raise InvalidParameterError("need T >= 1, k_epoch >= 0, batch_size >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidParameterError(f"optimizer must be one of {OPTIMIZERS}")
        if self.grid_points < 3 or self.zoom_levels < 1 or self.sweeps < 1:
            raise InvalidParameterError("need grid_points >= 3, zoom_levels >= 1, sweeps >= 1")
        for name in ("sigma_w_bounds", "theta_bounds"):
            b = getattr(self, name)
            if b is not None and not (0 < b[0] < b[1]):
                raise InvalidParameterError(f"{name} must satisfy 0 < lo < hi")
        if self.sigma_w_init is not None and not self.sigma_w_init > 0:
            raise InvalidParameterError("sigma_w_init must be positive")
        if not self.theta_init > 0:
            raise InvalidParameterError("theta_init must be positive")

    def init_layer(self, scene_params: SceneParams) -> VampLayerParams:
        sw = self.sigma_w_init if self.sigma_w_init is not None else math.sqrt(scene_params.mid_sigma2())
        return VampLayerParams(sw, self.theta_init)

    def bounds(self, init: VampLayerParams) -> tuple[tuple[float, float], tuple[float, float]]:
        sw = self.sigma_w_bounds or (init.sigma_w / 10.0, init.sigma_w * 10.0)
        return tuple(sw), tuple(self.theta_bounds)


@dataclass(eq=False)
class TrainedParams:
    layers: list[VampLayerParams]
    provenance: dict | None = None
    layer_loss: list[float] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.layers)

    def __eq__(self, other):
        if not isinstance(other, TrainedParams):
            return NotImplemented
        return (self.layers == other.layers and self.provenance == other.provenance
                and self.layer_loss == other.layer_loss)


def mse_loss(x_hat_RI: np.ndarray, x_true_RI: np.ndarray) -> float:
    """Mean over the batch (columns) of the squared error norm."""
    x_hat_RI = np.asarray(x_hat_RI, dtype=float)
    x_true_RI = np.asarray(x_true_RI, dtype=float)
    if x_hat_RI.shape != x_true_RI.shape:
        raise InvalidShapeError(f"shape mismatch {x_hat_RI.shape} vs {x_true_RI.shape}")
    diff = x_hat_RI - x_true_RI
    if diff.ndim == 1:
        return float(diff @ diff)
    return float(np.mean(np.sum(diff * diff, axis=0)))


def generate_batch(model: ObservationModel, scene_params: SceneParams, seeds) -> tuple[np.ndarray, np.ndarray]:
    """Stack ``(x0_RI, y_RI)`` columns for scenes drawn from each seed."""
    xs, ys = [], []
    for s in seeds:
        scene = generate_scene(scene_params, make_rng(s, 0))
        meas = measure(model, scene, make_rng(s, 1))
        xs.append(scene.x0_RI)
        ys.append(meas.y_RI)
    return np.stack(xs, axis=1), np.stack(ys, axis=1)


def _training_seeds(config: TrainConfig) -> list[int]:
    return [derive_seed(config.seed, k, d)
            for k in range(config.k_epoch) for d in range(config.batch_size)]


class _LayerObjective:
    """Batch MSE of one layer on a frozen prefix state, memoised in log-space.

    The LMMSE half of the layer depends on ``sigma_w`` only, so its output is
    kept in a small LRU cache and moves along ``theta`` cost one shrinkage.
    """

    lmmse_cache_size = 8

    def __init__(self, r_tilde, s2_tilde, At_y, factor, x_true, eps):
        self.r_tilde = r_tilde
        self.s2_tilde = np.asarray(s2_tilde, dtype=float)
        self.At_y = At_y
        self.factor = factor
        self.x_true = x_true
        self.eps = eps
        self.cache: dict[tuple[float, float], float] = {}
        self._lmmse: OrderedDict[float, tuple[np.ndarray, np.ndarray]] = OrderedDict()

    def _stage1(self, log_sw: float):
        hit = self._lmmse.get(log_sw)
        if hit is not None:
            self._lmmse.move_to_end(log_sw)
            return hit
        sigma_w = math.exp(log_sw)
        gamma = 1.0 / self.s2_tilde
        gamma_w = 1.0 / sigma_w**2
        x_tilde, vt_raw = self.factor.solve(gamma_w * self.At_y + gamma * self.r_tilde, gamma_w, gamma)
        vt = np.clip(vt_raw, self.eps, 1.0 - self.eps)
        r = (x_tilde - vt * self.r_tilde) / (1.0 - vt)
        sigma2 = self.s2_tilde * vt / (1.0 - vt)
        self._lmmse[log_sw] = (r, sigma2)
        if len(self._lmmse) > self.lmmse_cache_size:
            self._lmmse.popitem(last=False)
        return r, sigma2

    def __call__(self, log_sw: float, log_th: float) -> float:
        key = (float(log_sw), float(log_th))
        if key not in self.cache:
            VampLayerParams(math.exp(key[0]), math.exp(key[1]))  # validates
            r, sigma2 = self._stage1(key[0])
            x_hat = soft_threshold(r, math.exp(key[1]) * np.sqrt(sigma2))
            self.cache[key] = mse_loss(x_hat, self.x_true)
        return self.cache[key]


def _grid_refine(obj, start, lo, hi, config: TrainConfig):
    """Local coordinate search around ``start`` on successively finer grids.

    The first window spans half the box on each side of the incumbent, so the
    search descends from the starting point the way a gradient method would
    instead of jumping to distant basins that help this layer but leave a
    poor state for the next one.
    """
    best = np.array(start, dtype=float)
    best_val = obj(*best)
    G = config.grid_points
    half = (hi - lo) / 2.0
    for _level in range(config.zoom_levels):
        for _sweep in range(config.sweeps):
            for c in range(2):
                a = max(lo[c], best[c] - half[c])
                b = min(hi[c], best[c] + half[c])
                for g in np.linspace(a, b, G):
                    cand = best.copy()
                    cand[c] = g
                    val = obj(*cand)
                    if val < best_val:
                        best, best_val = cand, val
        half = half * 4.0 / (G - 1)
    return best, best_val


def _nelder_mead(obj, start, lo, hi):
    def f(p):
        return obj(*np.clip(p, lo, hi))
    res = optimize.minimize(f, start, method="Nelder-Mead",
                            options={"xatol": 1e-3, "fatol": 1e-10, "maxiter": 200})
    p = np.clip(res.x, lo, hi)
    return p, obj(*p)


def train_layerwise(model: ObservationModel, scene_params: SceneParams, config: TrainConfig,
                    factor: LmmseFactor | None = None) -> TrainedParams:
    """Fit ``(sigma_w, theta)`` one layer at a time on common random batches.

    The same ``k_epoch * batch_size`` scenes are reused for every candidate of
    every layer so that the argmin is well-defined and losses of successive
    layers are comparable.
    """
    init = config.init_layer(scene_params)
    provenance = {
        "scene_params": asdict(scene_params),
        "model": {"kind": model.kind, "M": model.M, "N": model.N, "seed": model.seed},
        "train": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(config).items()},
    }
    if config.k_epoch == 0:
        return TrainedParams([init] * config.T, provenance, [], ["k_epoch=0: returned init values"])

    fac = factor if factor is not None else LmmseFactor.from_model(model)
    x_true, y = generate_batch(model, scene_params, _training_seeds(config))
    r_tilde, s2_tilde, At_y = initial_state(y, model, None, fac)
    (sw_lo, sw_hi), (th_lo, th_hi) = config.bounds(init)
    lo = np.log([sw_lo, th_lo])
    hi = np.log([sw_hi, th_hi])
    init_point = np.clip([math.log(init.sigma_w), math.log(init.theta)], lo, hi)
    start = init_point.copy()

    layers: list[VampLayerParams] = []
    losses: list[float] = []
    warnings: list[str] = []
    for t in range(1, config.T + 1):
        obj = _LayerObjective(r_tilde, s2_tilde, At_y, fac, x_true, config.v_clamp_eps)
        init_val = obj(*init_point)
        seed_point = start if obj(*start) <= init_val else init_point
        best, best_val = _grid_refine(obj, seed_point, lo, hi, config)
        if config.optimizer == "nelder-mead":
            p, val = _nelder_mead(obj, best, lo, hi)
            if val < best_val:
                best, best_val = p, val
        if best_val < init_val:
            params = VampLayerParams(math.exp(best[0]), math.exp(best[1]))
        else:
            warnings.append(f"layer {t}: no improvement over init, kept init values")
            best, best_val = init_point, init_val
            params = init if np.all(init_point == [math.log(init.sigma_w), math.log(init.theta)]) \
                else VampLayerParams(math.exp(best[0]), math.exp(best[1]))
        layers.append(params)
        losses.append(float(best_val))
        log.info("layer %d: sigma_w=%.6g theta=%.6g loss=%.6g", t, params.sigma_w, params.theta, best_val)
        out = vamp_layer(r_tilde, s2_tilde, At_y, fac, params, config.v_clamp_eps)
        r_tilde, s2_tilde = out.r_tilde_next, out.sigma2_tilde_next
        # warm start the next layer from this one
        start = best.copy()
    provenance["layer_loss"] = losses
    return TrainedParams(layers, provenance, losses, warnings)


def untrained_params(scene_params: SceneParams, config: TrainConfig) -> TrainedParams:
    init = config.init_layer(scene_params)
    return TrainedParams([init] * config.T, None)


def test_unfolded(y_RI, model: ObservationModel, trained: TrainedParams, config: VampConfig,
                  factor: LmmseFactor | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Run the unfolded network with learned parameters; returns ``(x_hat_RI, r_RI)``."""
    if trained.T != config.T:
        raise InvalidParameterError(f"trained network has {trained.T} layers, config expects {config.T}")
    out = run_vamp(y_RI, model, trained.layers, config, factor)
    return out.x_hat_RI, out.r_RI


test_unfolded.__test__ = False  # not a pytest test despite the name


# ---------------------------------------------------------------------------
# persistence


def params_to_dict(trained: TrainedParams) -> dict:
    return {
        "version": PARAMS_VERSION,
        "T": trained.T,
        "layers": [{"sigma_w": p.sigma_w, "theta": p.theta} for p in trained.layers],
        "provenance": trained.provenance,
    }


def save_params(trained: TrainedParams, path) -> None:
    """Write JSON; floats use ``repr`` so the round trip is exact."""
    text = json.dumps(params_to_dict(trained), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n")


def params_from_dict(data, source: str = "<params>") -> TrainedParams:
    if not isinstance(data, dict):
        raise ParamsFormatError(f"{source}: top level must be an object")
    for key in ("version", "T", "layers"):
        if key not in data:
            raise ParamsFormatError(f"{source}: missing field '{key}'")
    if data["version"] != PARAMS_VERSION:
        raise ParamsFormatError(f"{source}: unsupported version {data['version']!r}")
    T = data["T"]
    layers_raw = data["layers"]
    if not isinstance(T, int) or T < 1:
        raise ParamsFormatError(f"{source}: field 'T' must be a positive integer")
    if not isinstance(layers_raw, list) or len(layers_raw) != T:
        raise ParamsFormatError(f"{source}: field 'layers' must be a list of length T={T}")
    layers = []
    for i, entry in enumerate(layers_raw):
        for key in ("sigma_w", "theta"):
            val = entry.get(key) if isinstance(entry, dict) else None
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                raise ParamsFormatError(f"{source}: layers[{i}].{key} must be a number")
            if not (math.isfinite(val) and val > 0):
                raise ParamsFormatError(f"{source}: layers[{i}].{key} must be positive and finite, got {val!r}")
        layers.append(VampLayerParams(float(entry["sigma_w"]), float(entry["theta"])))
    prov = data.get("provenance")
    losses = list(prov.get("layer_loss", [])) if isinstance(prov, dict) else []
    return TrainedParams(layers, prov if isinstance(prov, dict) else None, losses)


def load_params(path) -> TrainedParams:
    """Strictly validated load; a missing provenance block gives ``provenance=None``."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParamsFormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return params_from_dict(data, str(path))
