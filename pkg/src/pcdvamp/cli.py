"""Command-line front end.

Every output file starts with ``#`` comment lines holding the command, the
configuration (minus worker count and output directory) and the master seed,
so reruns with the same inputs reproduce each file byte for byte. Files are
written to a temporary sibling and renamed into place.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config, with_overrides
from .diagnostics import (HYPOTHESES, NORMALIZERS, PARTS, condition1_variance, ecdf_on_grid,
                          ecdf_report, empirical_metrics, roc_from_trials, run_trials)
from .errors import ConfigError, ParamsFormatError, PcdVampError
from .pcd import run_pcd
from .seeding import make_rng, trial_seed
from .signal_model import generate_scene, make_model, measure, read_vector_csv, realvec
from .theory import iterate_fixed_point
from .unfolding import TrainConfig, load_params, params_to_dict, train_layerwise
from .vamp import VampConfig, run_vamp

log = logging.getLogger("pcdvamp")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
ECDF_GRID = np.round(np.linspace(-4.0, 4.0, 161), 10)
PFA_TOLERANCE = 0.25


# ---------------------------------------------------------------------------
# output helpers


@contextlib.contextmanager
def atomic_text(path: Path):
    """Yield a text buffer; its content replaces ``path`` only if the block succeeds."""
    buf = io.StringIO()
    yield buf
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def _header(buf, command: str, cfg: ExperimentConfig, seed: int, **extra) -> None:
    buf.write(f"# pcdvamp {__version__} {command}\n")
    buf.write("# config: " + json.dumps(cfg.describe(), sort_keys=True, separators=(",", ":")) + "\n")
    buf.write(f"# master_seed: {seed}\n")
    for key, val in extra.items():
        buf.write(f"# {key}: {val}\n")


def _fmt(x) -> str:
    if x is None:
        return "absent"
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


# ---------------------------------------------------------------------------
# shared setup


def _model(cfg: ExperimentConfig):
    return make_model(cfg.model.kind, cfg.model.M, cfg.model.N, cfg.model.seed)


def _params(args, cfg: ExperimentConfig):
    path = args.params or cfg.params_path
    if not path:
        raise ConfigError("no trained parameters: pass --params or set [unfold] params")
    if not Path(path).is_file():
        raise ConfigError(f"params file not found: {path}")
    trained = load_params(path)
    if trained.provenance:
        m = trained.provenance.get("model", {})
        if m.get("N") not in (None, cfg.model.N) or m.get("M") not in (None, cfg.model.M):
            raise ConfigError(f"{path}: trained for M={m.get('M')}, N={m.get('N')}, "
                              f"config has M={cfg.model.M}, N={cfg.model.N}")
    return trained


def _trials(args, cfg):
    model = _model(cfg)
    trained = _params(args, cfg)
    return run_trials(model, trained, cfg.scene, cfg.pcd, cfg.run.trials, cfg.run.seed, cfg.run.workers)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args, cfg: ExperimentConfig) -> int:
    tc = cfg.unfold
    overrides = {}
    if args.k_epoch is not None:
        overrides["k_epoch"] = args.k_epoch
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        try:
            tc = TrainConfig(**{**tc.__dict__, **overrides})
        except PcdVampError as exc:
            raise ConfigError(f"[unfold]: {exc}") from exc
    trained = train_layerwise(_model(cfg), cfg.train_scene, tc)
    for t, loss in enumerate(trained.layer_loss, start=1):
        print(f"layer {t}: loss {loss:.6g}")
    for w in trained.warnings:
        print(f"warning: {w}", file=sys.stderr)
    out = Path(cfg.run.out) / "params.json"
    with atomic_text(out) as buf:
        buf.write(json.dumps(params_to_dict(trained), indent=2, sort_keys=True) + "\n")
    print(f"wrote {out}")
    return EXIT_OK


def _write_roc(path, cfg, curve) -> None:
    with atomic_text(path) as buf:
        _header(buf, "roc", cfg, cfg.run.seed, failed_trials=curve.failed_trials)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["preset_pfa", "achieved_pfa", "achieved_pd", "variant", "trials"])
        for r in curve.rows:
            w.writerow([_fmt(r.preset_pfa), _fmt(r.achieved_pfa), _fmt(r.achieved_pd), r.variant, r.trials])


def _write_metrics(path, cfg, trials) -> None:
    with atomic_text(path) as buf:
        _header(buf, "metrics", cfg, cfg.run.seed)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "seed", "L0", "sigma2_vamp", "sigma2_oracle", "sigma2_pcd", "threshold",
                    "iterations", "converged", "pd", "pfa", "error"])
        for t in trials:
            s2o = condition1_variance(t.w_RI, t.scene.support)
            if t.pcd is None:
                w.writerow([t.index, t.seed, t.scene.L0, _fmt(t.vamp.sigma2_vamp), _fmt(s2o),
                            "absent", "absent", "absent", "absent", "absent", "absent", t.error])
                continue
            m = empirical_metrics(t.pcd.detected_support, t.scene.support, t.scene.N)
            w.writerow([t.index, t.seed, t.scene.L0, _fmt(t.vamp.sigma2_vamp), _fmt(s2o),
                        _fmt(t.pcd.sigma2_pcd), _fmt(t.pcd.threshold), t.pcd.iterations,
                        _fmt(t.pcd.converged), _fmt(m.pd), _fmt(m.pfa), ""])


def cmd_roc(args, cfg: ExperimentConfig) -> int:
    trials = _trials(args, cfg)
    curve = roc_from_trials(trials, cfg.run.presets)
    out = Path(cfg.run.out)
    _write_roc(out / "roc.csv", cfg, curve)
    _write_metrics(out / "metrics.csv", cfg, trials)
    print(f"wrote {out / 'roc.csv'} and {out / 'metrics.csv'} ({curve.failed_trials} failed trials)")
    return EXIT_OK


def cmd_pfa_control(args, cfg: ExperimentConfig) -> int:
    trials = _trials(args, cfg)
    curve = roc_from_trials(trials, cfg.run.presets, variants=("pcd",))
    path = Path(cfg.run.out) / "pfa_control.csv"
    with atomic_text(path) as buf:
        _header(buf, "pfa-control", cfg, cfg.run.seed, failed_trials=curve.failed_trials,
                tolerance=PFA_TOLERANCE)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["preset_pfa", "achieved_pfa", "relative_error", "within_tolerance",
                    "false_alarms", "null_cells", "trials"])
        for r in curve.rows:
            rel = r.achieved_pfa / r.preset_pfa - 1.0
            w.writerow([_fmt(r.preset_pfa), _fmt(r.achieved_pfa), _fmt(rel), int(abs(rel) <= PFA_TOLERANCE),
                        r.false_alarms, r.null_cells, r.trials])
            print(f"preset {r.preset_pfa:g}: achieved {r.achieved_pfa:.4g} ({rel:+.1%})")
    return EXIT_OK


def cmd_ecdf(args, cfg: ExperimentConfig) -> int:
    trials = _trials(args, cfg)
    report = ecdf_report((t.vamp, t.scene, t.pcd) for t in trials)
    path = Path(cfg.run.out) / "ecdf.csv"
    with atomic_text(path) as buf:
        _header(buf, "ecdf", cfg, cfg.run.seed, degenerate=int(report.degenerate))
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["part", "hypothesis", "normalizer", "x", "D"])
        for part in PARTS:
            for hyp in HYPOTHESES:
                for norm in NORMALIZERS:
                    c = report.curves.get((part, hyp, norm))
                    if c is None:
                        continue
                    D = ecdf_on_grid(c.grid, ECDF_GRID)
                    for x, d in zip(ECDF_GRID, D):
                        w.writerow([part, hyp, norm, _fmt(x), _fmt(d)])
    summary = Path(cfg.run.out) / "ecdf_summary.csv"
    with atomic_text(summary) as buf:
        _header(buf, "ecdf", cfg, cfg.run.seed)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["part", "hypothesis", "normalizer", "count", "sup_abs"])
        for (part, hyp, norm), c in sorted(report.curves.items()):
            w.writerow([part, hyp, norm, c.count, _fmt(c.sup_abs)])
            print(f"{part:4s} {hyp} {norm:6s} n={c.count:7d} sup|D|={c.sup_abs:.4f}")
    return EXIT_OK


def cmd_theory(args, cfg: ExperimentConfig) -> int:
    th = cfg.theory
    study = iterate_fixed_point(th.sigma2_init, th.sigma2_true, th.pfa0, th.tol, th.max_iter)
    path = Path(cfg.run.out) / "theory.csv"
    with atomic_text(path) as buf:
        _header(buf, "theory", cfg, cfg.run.seed, converged=int(study.converged))
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["m", "sigma2_iterate", "step_ratio"])
        limit = study.limit
        for m, s in enumerate(study.iterates, start=1):
            ratio = ""
            if m < len(study.iterates):
                da, db = abs(s - limit), abs(study.iterates[m] - limit)
                ratio = _fmt(db / da) if da > 0 else ""
            w.writerow([m, _fmt(s), ratio])
        w.writerow(["limit", _fmt(study.limit), ""])
        w.writerow(["approx_limit", _fmt(study.approx_limit), ""])
        w.writerow(["contraction_bound", _fmt(study.contraction_bound), ""])
        for name in ("pfa_max2", "pfa_max1"):
            w.writerow([name, _fmt(getattr(study, name)), ""])
    print(f"limit {study.limit:.12g}, approx {study.approx_limit:.12g}, "
          f"{len(study.iterates) - 1} steps, converged={study.converged}")
    return EXIT_OK


def cmd_detect(args, cfg: ExperimentConfig) -> int:
    if not args.measurement:
        raise ConfigError("detect needs --measurement PATH")
    trained = _params(args, cfg)
    model = _model(cfg)
    y = read_vector_csv(args.measurement)
    if y.size != model.M:
        raise PcdVampError(f"{args.measurement}: expected {model.M} measurements, got {y.size}")
    out = run_vamp(realvec(y), model, trained.layers, VampConfig(T=trained.T))
    res = run_pcd(out.x_hat_RI, out.r_RI, cfg.pcd)
    path = Path(cfg.run.out) / "detections.csv"
    with atomic_text(path) as buf:
        _header(buf, "detect", cfg, cfg.run.seed, measurement=Path(args.measurement).name,
                sigma2_pcd=_fmt(res.sigma2_pcd), threshold=_fmt(res.threshold), pfa=_fmt(cfg.pcd.pfa),
                iterations=res.iterations, converged=int(res.converged))
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "amplitude"])
        for i in res.detected_support:
            w.writerow([int(i), _fmt(res.x_hat_pfa[i])])
    print(f"{res.detected_support.size} detections, sigma2_pcd={res.sigma2_pcd:.6g}, "
          f"threshold={res.threshold:.6g}")
    return EXIT_OK


def cmd_gen_measurement(args, cfg: ExperimentConfig) -> int:
    model = _model(cfg)
    seed = trial_seed(cfg.run.seed, 0)
    scene = generate_scene(cfg.scene, make_rng(seed, 0))
    meas = measure(model, scene, make_rng(seed, 1))
    out = Path(cfg.run.out)
    with atomic_text(out / "measurement.csv") as buf:
        _header(buf, "gen-measurement", cfg, cfg.run.seed)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "re", "im"])
        for i, v in enumerate(meas.y):
            w.writerow([i, _fmt(v.real), _fmt(v.imag)])
    with atomic_text(out / "scene.csv") as buf:
        _header(buf, "gen-measurement", cfg, cfg.run.seed, noise_sigma2=_fmt(scene.noise_sigma2))
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "re", "im", "occupied"])
        for i, v in enumerate(scene.x0):
            w.writerow([i, _fmt(v.real), _fmt(v.imag), int(scene.occupancy[i])])
    print(f"wrote {out / 'measurement.csv'} ({model.M} rows, {scene.L0} targets)")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "roc": cmd_roc,
    "pfa-control": cmd_pfa_control,
    "ecdf": cmd_ecdf,
    "theory": cmd_theory,
    "detect": cmd_detect,
    "gen-measurement": cmd_gen_measurement,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="small", help="TOML path or preset name (small, large)")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--workers", type=int, help="worker processes for Monte Carlo trials")
    common.add_argument("--out", help="output directory")
    common.add_argument("--trials", type=int, help="override [run] trials")
    common.add_argument("--params", help="trained-parameter JSON")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pcdvamp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "train":
            p.add_argument("--k-epoch", type=int, help="override [unfold] k_epoch")
        if name == "detect":
            p.add_argument("--measurement", help="CSV with columns index, re, im")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and not (0 <= args.seed < 2**64):
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = load_config(args.config)
        # the train seed lives in [unfold]; every other command uses [run] seed
        run_seed = args.seed if args.command != "train" else None
        cfg = with_overrides(cfg, seed=run_seed, workers=args.workers, out=args.out, trials=args.trials)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, ParamsFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PcdVampError, ArithmeticError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
