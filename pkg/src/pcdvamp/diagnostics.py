"""Recovery-error distribution checks and Monte Carlo detection harnesses.

Everything here needs ground truth and therefore only runs in simulation.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy import special

from .errors import InvalidParameterError, PcdVampError
from .pcd import PcdConfig, PcdResult, detect, run_pcd, threshold_for_pfa
from .seeding import make_rng, trial_seed
from .signal_model import (Measurement, ObservationModel, Scene, SceneParams, amplitude,
                           generate_scene, measure, split_real_imag)
from .unfolding import TrainedParams
from .vamp import VampConfig, VampOutput, run_vamp

log = logging.getLogger(__name__)

PARTS = ("real", "imag")
HYPOTHESES = ("H0", "H1")
NORMALIZERS = ("oracle", "vamp", "pcd")
VARIANTS = ("pcd", "oracle-bound", "vamp-variance")


# ---------------------------------------------------------------------------
# detection metrics


@dataclass(frozen=True)
class DetectionMetrics:
    pd: float | None
    pfa: float
    true_detections: int
    false_alarms: int
    L0: int
    null_cells: int


def empirical_metrics(detected_support, true_support, N: int) -> DetectionMetrics:
    detected = set(int(i) for i in detected_support)
    truth = set(int(i) for i in true_support)
    tp = len(detected & truth)
    fp = len(detected - truth)
    L0 = len(truth)
    null = N - L0
    pd = tp / L0 if L0 else None
    pfa = fp / null if null else 0.0
    return DetectionMetrics(pd, pfa, tp, fp, L0, null)


# ---------------------------------------------------------------------------
# condition-1 (oracle) variances


def _partitions(w_RI: np.ndarray, true_support) -> dict[tuple[str, str], np.ndarray]:
    w_R, w_I = split_real_imag(np.asarray(w_RI, dtype=float))
    h1 = np.zeros(w_R.shape[0], dtype=bool)
    h1[np.asarray(list(true_support), dtype=int)] = True
    return {
        ("real", "H1"): w_R[h1], ("real", "H0"): w_R[~h1],
        ("imag", "H1"): w_I[h1], ("imag", "H0"): w_I[~h1],
    }


def oracle_variances(w_RI: np.ndarray, true_support):
    """Unbiased variances ``(R_H1, R_H0, I_H1, I_H0)`` of the recovery error.

    A partition with fewer than two samples yields ``None``.
    """
    parts = _partitions(w_RI, true_support)
    out = []
    for key in (("real", "H1"), ("real", "H0"), ("imag", "H1"), ("imag", "H0")):
        x = parts[key]
        out.append(float(np.var(x, ddof=1)) if x.size >= 2 else None)
    return tuple(out)


def condition1_variance(w_RI: np.ndarray, true_support) -> float | None:
    """Mean of the available oracle variances."""
    vals = [v for v in oracle_variances(w_RI, true_support) if v is not None]
    return float(np.mean(vals)) if vals else None


# ---------------------------------------------------------------------------
# ECDF differences


def normal_cdf(x):
    return special.ndtr(x)


def ecdf_diff(samples, normalizer_sigma: float):
    """ECDF of ``samples / sigma`` minus the standard normal CDF.

    Returns ``(grid, D, sup_abs)``: ``grid`` holds the sorted normalised
    samples, ``D`` the right-continuous difference at each of them, and
    ``sup_abs`` the supremum of ``|D|`` over both one-sided limits.
    """
    if not normalizer_sigma > 0:
        raise InvalidParameterError("normalizer_sigma must be positive")
    z = np.sort(np.asarray(samples, dtype=float).ravel()) / normalizer_sigma
    n = z.size
    if n == 0:
        raise InvalidParameterError("need at least one sample")
    phi = normal_cdf(z)
    upper = np.arange(1, n + 1) / n - phi
    lower = np.arange(0, n) / n - phi
    sup_abs = float(max(np.max(np.abs(upper)), np.max(np.abs(lower))))
    return z, upper, sup_abs


def ecdf_on_grid(z_sorted: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``ECDF(x) - Phi(x)`` for already-normalised sorted samples."""
    return np.searchsorted(z_sorted, x, side="right") / z_sorted.size - normal_cdf(x)


@dataclass
class EcdfCurve:
    grid: np.ndarray
    D: np.ndarray
    sup_abs: float
    count: int


@dataclass
class EcdfReport:
    curves: dict[tuple[str, str, str], EcdfCurve]
    degenerate: bool = False
    sample_counts: dict[tuple[str, str, str], int] = field(default_factory=dict)

    def sup_abs(self, part: str, hyp: str, normalizer: str) -> float | None:
        c = self.curves.get((part, hyp, normalizer))
        return c.sup_abs if c else None


def pooled_normalized(trials, normalizer: str) -> dict[tuple[str, str], list[np.ndarray]]:
    """Per (part, hypothesis): list of per-trial normalised error arrays."""
    pools = {(p, h): [] for p in PARTS for h in HYPOTHESES}
    for vamp_out, scene, pcd_res in trials:
        w = np.asarray(vamp_out.r_RI) - scene.x0_RI
        parts = _partitions(w, scene.support)
        for key, x in parts.items():
            if x.size == 0:
                continue
            if normalizer == "oracle":
                if x.size < 2:
                    continue
                s2 = float(np.var(x, ddof=1))
            elif normalizer == "vamp":
                s2 = float(vamp_out.sigma2_vamp)
            elif normalizer == "pcd":
                if pcd_res is None:
                    continue
                s2 = pcd_res.sigma2_pcd
            else:
                raise InvalidParameterError(f"unknown normalizer {normalizer!r}")
            if s2 > 0:
                pools[key].append(x / math.sqrt(s2))
    return pools


def ecdf_report(trials) -> EcdfReport:
    """Pool the normalised recovery errors of many trials into the 12 ECDF curves.

    ``trials`` is an iterable of ``(vamp_output, scene, pcd_result)``.
    """
    trials = list(trials)
    degenerate = all(np.all(np.asarray(v.r_RI) == s.x0_RI) for v, s, _ in trials)
    curves = {}
    counts = {}
    if not degenerate:
        for normalizer in NORMALIZERS:
            for (part, hyp), chunks in pooled_normalized(trials, normalizer).items():
                if not chunks:
                    continue
                z, D, sup = ecdf_diff(np.concatenate(chunks), 1.0)
                key = (part, hyp, normalizer)
                curves[key] = EcdfCurve(z, D, sup, z.size)
                counts[key] = z.size
    return EcdfReport(curves, degenerate, counts)


# ---------------------------------------------------------------------------
# Monte Carlo trials


@dataclass(eq=False)
class TrialData:
    index: int
    seed: int
    scene: Scene
    measurement: Measurement
    vamp: VampOutput
    pcd: PcdResult | None
    error: str | None = None

    @property
    def w_RI(self) -> np.ndarray:
        return self.vamp.r_RI - self.scene.x0_RI


def simulate_trial(index: int, model: ObservationModel, trained: TrainedParams,
                   scene_params: SceneParams, pcd_config: PcdConfig, master_seed: int,
                   vamp_config: VampConfig | None = None) -> TrialData:
    """Scene, measurement, unfolded VAMP and PCD for trial ``index``."""
    seed = trial_seed(master_seed, index)
    scene = generate_scene(scene_params, make_rng(seed, 0))
    meas = measure(model, scene, make_rng(seed, 1))
    cfg = vamp_config or VampConfig(T=trained.T)
    out = run_vamp(meas.y_RI, model, trained.layers, cfg)
    try:
        res = run_pcd(out.x_hat_RI, out.r_RI, pcd_config)
        err = None
    except PcdVampError as exc:
        res, err = None, f"{type(exc).__name__}: {exc}"
    return TrialData(index, seed, scene, meas, out, res, err)


def map_trials(fn, n_trials: int, workers: int = 1):
    """Apply ``fn(i)`` for ``i < n_trials``; results come back in index order."""
    if workers <= 1:
        return [fn(i) for i in range(n_trials)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_trials), chunksize=max(1, n_trials // (4 * workers))))


def run_trials(model, trained, scene_params, pcd_config, trials: int, seed: int,
               workers: int = 1) -> list[TrialData]:
    fn = partial(simulate_trial, model=model, trained=trained, scene_params=scene_params,
                 pcd_config=pcd_config, master_seed=seed)
    return map_trials(fn, trials, workers)


# ---------------------------------------------------------------------------
# ROC / false-alarm control


@dataclass(frozen=True)
class RocRow:
    variant: str
    preset_pfa: float
    achieved_pfa: float
    achieved_pd: float | None
    trials: int
    null_cells: int
    occupied_cells: int
    false_alarms: int
    true_detections: int


@dataclass
class RocCurve:
    rows: list[RocRow]
    failed_trials: int = 0

    def variant(self, name: str) -> list[RocRow]:
        return [r for r in self.rows if r.variant == name]

    def pd_at_pfa(self, name: str, target: float) -> float:
        """Detection rate at an achieved false-alarm rate, log-linear interpolation."""
        pts = sorted((r.achieved_pfa, r.achieved_pd) for r in self.variant(name)
                     if r.achieved_pfa > 0 and r.achieved_pd is not None)
        if not pts:
            raise InvalidParameterError(f"no usable ROC points for variant {name!r}")
        pfa = np.log([p for p, _ in pts])
        pd = np.array([d for _, d in pts])
        return float(np.interp(math.log(target), pfa, pd))


def variant_variance(trial: TrialData, variant: str) -> float | None:
    if variant == "pcd":
        return trial.pcd.sigma2_pcd if trial.pcd is not None else None
    if variant == "oracle-bound":
        return condition1_variance(trial.w_RI, trial.scene.support)
    if variant == "vamp-variance":
        return float(trial.vamp.sigma2_vamp)
    raise InvalidParameterError(f"unknown variant {variant!r}")


def trial_counts(trial: TrialData, presets, variants=VARIANTS) -> dict[str, np.ndarray] | None:
    """Per variant an ``(n_presets, 2)`` int array of (false alarms, true detections)."""
    if trial.pcd is None:
        return None
    r = amplitude(trial.vamp.r_RI)
    h1 = np.zeros(r.size, dtype=bool)
    h1[trial.scene.support] = True
    out = {}
    for v in variants:
        s2 = variant_variance(trial, v)
        if s2 is None or not s2 > 0:
            return None
        counts = np.zeros((len(presets), 2), dtype=np.int64)
        for k, p in enumerate(presets):
            T = threshold_for_pfa(s2, p)
            hit = r > T
            counts[k] = (np.count_nonzero(hit & ~h1), np.count_nonzero(hit & h1))
        out[v] = counts
    return out


def roc_from_trials(trial_list, presets, variants=VARIANTS) -> RocCurve:
    presets = list(presets)
    totals = {v: np.zeros((len(presets), 2), dtype=np.int64) for v in variants}
    null_cells = occupied = used = failed = 0
    for trial in trial_list:
        c = trial_counts(trial, presets, variants)
        if c is None:
            failed += 1
            log.warning("trial %d excluded: %s", trial.index, trial.error or "no valid variance")
            continue
        used += 1
        null_cells += trial.scene.N - trial.scene.L0
        occupied += trial.scene.L0
        for v in variants:
            totals[v] += c[v]
    rows = []
    for v in variants:
        for k, p in enumerate(presets):
            fa, td = (int(x) for x in totals[v][k])
            rows.append(RocRow(v, float(p), fa / null_cells if null_cells else float("nan"),
                               td / occupied if occupied else None,
                               used, null_cells, occupied, fa, td))
    return RocCurve(rows, failed)


def monte_carlo_roc(model, trained, scene_params, pcd_config, presets, trials: int, seed: int,
                    workers: int = 1) -> RocCurve:
    """Pooled achieved (Pfa, Pd) per preset for the PCD, oracle and VAMP-variance thresholds.

    PCD runs once per trial; each preset only re-thresholds the amplitude with
    the converged variance.
    """
    if trials < 1:
        raise InvalidParameterError("trials must be at least 1")
    data = run_trials(model, trained, scene_params, pcd_config, trials, seed, workers)
    return roc_from_trials(data, presets)
