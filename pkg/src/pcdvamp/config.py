"""TOML experiment configuration.

Sections::

    [model]        kind, M, N, seed
    [scene]        test-scene ranges (SceneParams without N)
    [unfold]       TrainConfig fields, optional ``params`` path
    [unfold.scene] training-scene ranges
    [pcd]          pfa0, pfa, c_tol, m_max
    [run]          trials, presets, out, workers, seed, ecdf_grid
    [theory]       sigma2_true, pfa0, sigma2_init, tol, max_iter

Two presets ship with the package: ``small`` (M=200, N=256) and ``large``
(M=600, N=1000).
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import tomli

from .errors import ConfigError, PcdVampError
from .pcd import PcdConfig
from .signal_model import KINDS, SceneParams
from .unfolding import TrainConfig

PRESETS = ("small", "large")


@dataclass(frozen=True)
class ModelSection:
    kind: str = "partial-fourier"
    M: int = 200
    N: int = 256
    seed: int = 1


@dataclass(frozen=True)
class RunSection:
    trials: int = 500
    presets: tuple[float, ...] = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
    out: str = "out"
    workers: int = 1
    seed: int = 2024


@dataclass(frozen=True)
class TheorySection:
    sigma2_true: float = 1.0
    pfa0: float = 1e-5
    sigma2_init: float = 0.5
    tol: float = 1e-12
    max_iter: int = 200


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSection
    scene: SceneParams
    train_scene: SceneParams
    unfold: TrainConfig
    pcd: PcdConfig
    run: RunSection
    theory: TheorySection
    params_path: str | None = None
    raw: dict = field(default_factory=dict, compare=False)

    def describe(self) -> dict:
        """Config as plain data for file headers; excludes worker count and output dir."""
        d = copy.deepcopy(self.raw)
        run = d.get("run", {})
        run.pop("workers", None)
        run.pop("out", None)
        return d


def _build(cls, section: dict, name: str, **extra):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"[{name}]: unknown field(s) {sorted(unknown)}")
    kwargs = dict(section)
    kwargs.update(extra)
    for key, val in kwargs.items():
        if isinstance(val, list):
            kwargs[key] = tuple(val)
    try:
        return cls(**kwargs)
    except (TypeError, PcdVampError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def from_dict(data: dict) -> ExperimentConfig:
    data = copy.deepcopy(data)
    model = _build(ModelSection, data.get("model", {}), "model")
    if model.kind not in KINDS or model.kind == "custom":
        raise ConfigError(f"[model]: kind must be 'partial-fourier' or 'gaussian', got {model.kind!r}")
    if not (1 <= model.M <= model.N):
        raise ConfigError(f"[model]: need 1 <= M <= N, got M={model.M}, N={model.N}")
    scene = _build(SceneParams, data.get("scene", {}), "scene", N=model.N)
    unfold_raw = dict(data.get("unfold", {}))
    params_path = unfold_raw.pop("params", None)
    train_scene = _build(SceneParams, unfold_raw.pop("scene", {}), "unfold.scene", N=model.N)
    unfold = _build(TrainConfig, unfold_raw, "unfold")
    pcd = _build(PcdConfig, data.get("pcd", {}), "pcd")
    run = _build(RunSection, data.get("run", {}), "run")
    if run.trials < 1 or run.workers < 1:
        raise ConfigError("[run]: trials and workers must be positive")
    if not run.presets or not all(0 < p <= 1 for p in run.presets):
        raise ConfigError("[run]: presets must be a non-empty list of rates in (0, 1]")
    theory = _build(TheorySection, data.get("theory", {}), "theory")
    extra = set(data) - {"model", "scene", "unfold", "pcd", "run", "theory"}
    if extra:
        raise ConfigError(f"unknown section(s) {sorted(extra)}")
    return ExperimentConfig(model, scene, train_scene, unfold, pcd, run, theory, params_path, data)


def load_config(path_or_preset: str | Path) -> ExperimentConfig:
    """Load a TOML file, or one of the shipped presets by name."""
    name = str(path_or_preset)
    if name in PRESETS:
        text = resources.files("pcdvamp.presets").joinpath(f"{name}.toml").read_text()
        source = f"preset:{name}"
    else:
        try:
            text = Path(name).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {name}: {exc}") from exc
        source = name
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return from_dict(data)


def with_overrides(cfg: ExperimentConfig, **run_overrides) -> ExperimentConfig:
    data = copy.deepcopy(cfg.raw)
    run = data.setdefault("run", {})
    for key, val in run_overrides.items():
        if val is not None:
            run[key] = val
    return from_dict(data)
