"""Implementations of the ``verify`` and ``landscape`` subcommands."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..exceptions import ConfigError, NCELandscapeError
from ..landscape import CertifySetup, LandscapeReport, certify
from ..numerics import sym_eigen
from .config import ExperimentConfig
from .experiment import _f, build_objective

CHECKS_HEADER = ("verdict", "claim", "measured", "bound", "tolerance", "anchor", "note")


def certify_setup(cfg: ExperimentConfig) -> CertifySetup:
    if cfg.family.kind != "gaussian_mean_1d":
        raise ConfigError("verify needs family kind gaussian_mean_1d")
    return CertifySetup(
        R_values=tuple(cfg.family.r_values),
        loss_kinds=tuple(cfg.losses),
        seed=cfg.seed,
        annulus_points=cfg.annulus_points,
        pair_checks=cfg.pair_checks,
        ngd_budget=cfg.ngd_budget,
        bound_scale=cfg.bound_scale,
    )


def write_report(report: LandscapeReport, directory, prefix: str) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    text_path = directory / f"{prefix}_report.txt"
    text_path.write_text(report.text(), encoding="utf-8")
    csv_path = directory / f"{prefix}_checks.csv"
    with csv_path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CHECKS_HEADER)
        for c in report.checks:
            fmt = (lambda v: v if isinstance(v, str) else _f(v))
            w.writerow([c.verdict, c.claim, fmt(c.measured), fmt(c.bound), _f(c.tolerance), c.anchor, c.note])
    return text_path, csv_path


def verify_command(cfg: ExperimentConfig, directory=None) -> tuple[int, LandscapeReport]:
    """Run the certification suite; exit status 0 (all pass), 1 (some check
    failed) or 2 (an evaluation error left the report partial)."""
    directory = cfg.resolved_output_dir() if directory is None else Path(directory)
    setup = certify_setup(cfg)
    try:
        report = certify(setup)
    except NCELandscapeError as exc:
        report = LandscapeReport(header=[f"aborted: {exc}"])
        write_report(report, directory, cfg.prefix)
        return 2, report
    write_report(report, directory, cfg.prefix)
    if report.inconclusive:
        return 2, report
    return (0 if report.passed else 1), report


def landscape_command(cfg: ExperimentConfig, directory=None, n_points: int | None = None) -> list[Path]:
    """Loss, gradient norm and Hessian extremes along the segment from the
    noise parameter to the optimum, one file per loss."""
    directory = cfg.resolved_output_dir() if directory is None else Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for loss in cfg.losses:
        obj = build_objective(cfg, loss)
        n = n_points or (101 if obj.dim == 2 else 33)
        a, b = obj.tau_q.vector, obj.tau_star.vector
        path = directory / f"{cfg.prefix}_{loss}_segment.dat"
        with path.open("w", encoding="utf-8") as fh:
            fh.write("# t loss grad_norm sigma_min sigma_max dist\n")
            for t in np.linspace(0.0, 1.0, n):
                tau = a + t * (b - a)
                ev = obj.evaluate(tau, order=2)
                eig = sym_eigen(ev.hessian)
                fh.write(" ".join([_f(t), _f(ev.loss), _f(np.linalg.norm(ev.gradient)), _f(eig.min),
                                   _f(eig.max), _f(np.linalg.norm(tau - b))]) + "\n")
        paths.append(path)
    return paths
