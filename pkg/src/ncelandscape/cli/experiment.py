"""Optimizer sweeps over (loss, algorithm, run) cells and their output files."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .. import expfam
from ..exceptions import ConfigError, DivergenceError, SingularHessianError, UnderflowError
from ..expfam import DiagGaussian, GaussianMean1D
from ..landscape import condition_number_at_optimum, hessian_extremes, neighborhood_constants, segment_extremes
from ..objective import ClipPolicy, MonteCarlo, Objective, Quadrature
from ..optim import AlgoConfig, default_step_size, run
from .config import ExperimentConfig

CSV_HEADER = ("loss", "algo", "run", "step", "loss_value", "grad_norm", "dist", "min_dist", "status")
HELDOUT_SIZE = 2048
HELDOUT_OFFSET = 10**6
AUTO_ETA_OFFSET = 2 * 10**6


class Row(NamedTuple):
    loss: str
    algo: str
    run: int
    step: int
    loss_value: float
    grad_norm: float
    dist: float
    min_dist: float
    status: str


@dataclass
class ResultTable:
    rows: list[Row] = field(default_factory=list)
    best: dict = field(default_factory=dict)  # (loss, algo) -> run index
    settings: dict = field(default_factory=dict)  # (loss, algo) -> {"eta": ..., ...}

    def __len__(self):
        return len(self.rows)

    def cells(self) -> list[tuple[str, str]]:
        seen = []
        for r in self.rows:
            if (r.loss, r.algo) not in seen:
                seen.append((r.loss, r.algo))
        return seen

    def select(self, loss: str, algo: str, run: int | None = None) -> list[Row]:
        return [r for r in self.rows if r.loss == loss and r.algo == algo and (run is None or r.run == run)]

    def final_min_dist(self, loss: str, algo: str) -> float:
        """Mean over runs of the last min-distance value."""
        runs = sorted({r.run for r in self.select(loss, algo)})
        return float(np.mean([self.select(loss, algo, k)[-1].min_dist for k in runs]))


# ---------------------------------------------------------------------------
# objective construction


def build_family(cfg: ExperimentConfig):
    f = cfg.family
    if f.kind == "gaussian_mean_1d":
        fam = GaussianMean1D()
        return fam, expfam.tau_of_theta(fam, f.theta_star), expfam.tau_of_theta(fam, f.theta_q)
    fam = DiagGaussian(f.dim)
    star = expfam.tau_of_theta(fam, np.concatenate([f.mean_star, f.var_star]))
    q = expfam.tau_of_theta(fam, np.concatenate([f.mean_q, f.var_q]))
    return fam, star, q


def clip_policy(cfg: ExperimentConfig, loss: str, algo: str | None = None) -> ClipPolicy:
    default = ClipPolicy.default_for(loss)
    lr = cfg.setting("log_ratio_cap", algo, loss)
    gn = cfg.setting("grad_norm_cap", algo, loss, default=None)
    return ClipPolicy(
        grad_norm_cap=default.grad_norm_cap if gn == "auto" else gn,
        log_ratio_cap=default.log_ratio_cap if lr == "auto" else lr,
    )


def build_objective(cfg: ExperimentConfig, loss: str, algo: str | None = None, seed: int | None = None):
    fam, star, q = build_family(cfg)
    backend = cfg.backend
    if backend == "auto":
        backend = "quadrature" if isinstance(fam, GaussianMean1D) else "montecarlo"
    if backend == "quadrature":
        return Objective(loss, fam, star, q, Quadrature())
    n = cfg.setting("batch_size", algo, loss, default=512)
    return Objective(loss, fam, star, q, MonteCarlo(n=int(n), seed=cfg.seed if seed is None else seed,
                                                     clip=clip_policy(cfg, loss, algo)))


def run_seed(cfg: ExperimentConfig, run_index: int) -> int:
    return cfg.seed ^ run_index


def resolve_step_size(cfg: ExperimentConfig, loss: str, algo: str) -> dict:
    """Step size for a cell plus the constants it was derived from."""
    value = cfg.setting("eta", algo, loss)
    if value != "auto":
        return {"eta": float(value), "source": "explicit"}
    obj = build_objective(cfg, loss, algo, seed=cfg.seed + AUTO_ETA_OFFSET)
    if algo == "gd":
        smax = hessian_extremes(obj, obj.tau_q)[1]
        return {"eta": default_step_size("gd", sigma_max_global=smax), "source": "auto",
                "sigma_max_global": smax}
    if algo == "newton":
        lo, hi = segment_extremes(obj, 65 if isinstance(obj.backend, Quadrature) else 17)
        if not lo > 0:
            raise ConfigError(f"{loss}/newton: Hessian is not positive definite on the segment")
        return {"eta": default_step_size("newton", sigma_min_global=lo, sigma_max_global=hi), "source": "auto",
                "sigma_min_global": lo, "sigma_max_global": hi}
    delta = cfg.setting("delta", algo, loss)
    d0 = float(np.linalg.norm(obj.tau_q.vector - obj.tau_star.vector))
    if delta == "auto":
        delta = 0.05 * d0
    try:
        kappa = condition_number_at_optimum(obj)
    except UnderflowError as exc:
        raise ConfigError(f"{loss}/ngd: cannot derive an automatic step size ({exc})") from None
    consts = neighborhood_constants(obj, 16, cfg.seed)
    eta = default_step_size("ngd", beta_u=consts.beta_u, beta_l=consts.beta_l, kappa_star=kappa, delta=delta)
    return {"eta": eta, "source": "auto", "delta": delta, "kappa_star": kappa,
            "beta_u": consts.beta_u, "beta_l": consts.beta_l}


# ---------------------------------------------------------------------------
# the sweep


def _trace_rows(loss, algo, run_index, trace, status) -> list[Row]:
    rows = []
    mins = trace.min_dists
    n = len(trace.records)
    for i, (rec, m) in enumerate(zip(trace.records, mins)):
        rows.append(Row(loss, algo, run_index, rec.step, rec.loss, rec.grad_norm, rec.dist, float(m),
                        status if i == n - 1 else "ok"))
    return rows


def run_experiment(cfg: ExperimentConfig, progress=None) -> ResultTable:
    """Run every (loss, algorithm, run) cell of ``cfg``.

    Cells are independent: a cell that diverges or meets a singular Hessian
    keeps the rows it produced, and its last row carries the status.
    """
    table = ResultTable()
    for loss in cfg.losses:
        for algo in cfg.algorithms:
            settings = resolve_step_size(cfg, loss, algo)
            table.settings[(loss, algo)] = settings
            finals = []
            for k in range(cfg.runs):
                obj = build_objective(cfg, loss, algo, seed=run_seed(cfg, k))
                config = AlgoConfig(algo, settings["eta"], cfg.steps)
                try:
                    trace = run(obj, config, obj.tau_q)
                    status = trace.status
                except (DivergenceError, SingularHessianError) as exc:
                    trace = exc.trace
                    status = "diverged" if isinstance(exc, DivergenceError) else "singular"
                table.rows.extend(_trace_rows(loss, algo, k, trace, status))
                finals.append(trace.records[-1].tau if trace.records else obj.tau_q.vector)
                if progress is not None:
                    progress(loss, algo, k, trace)
            table.best[(loss, algo)] = _best_run(cfg, loss, algo, finals)
    table.rows.sort(key=lambda r: (r.loss, r.algo, r.run, r.step))
    return table


def _best_run(cfg, loss, algo, finals) -> int:
    """Run whose final iterate has the lowest loss on a held-out batch."""
    obj = build_objective(cfg, loss, algo)
    batch = obj.sample_batch(HELDOUT_SIZE, cfg.seed + HELDOUT_OFFSET)
    clip = clip_policy(cfg, loss, algo)
    scores = []
    for tau in finals:
        v = obj.empirical_loss(tau, batch, clip)
        scores.append(v if math.isfinite(v) else math.inf)
    return int(np.argmin(scores))


# ---------------------------------------------------------------------------
# files


def _f(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(table: ResultTable, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in table.rows:
                w.writerow([r.loss, r.algo, r.run, r.step, _f(r.loss_value), _f(r.grad_norm), _f(r.dist),
                            _f(r.min_dist), r.status])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return path


def read_csv(path) -> ResultTable:
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [
            Row(r[0], r[1], int(r[2]), int(r[3]), float(r[4]), float(r[5]), float(r[6]), float(r[7]), r[8])
            for r in reader
        ]
    return ResultTable(rows=rows)


def _padded(series: list[np.ndarray]) -> np.ndarray:
    """Stack runs of unequal length, repeating each run's last value."""
    n = max(len(s) for s in series)
    return np.array([np.concatenate([s, np.full(n - len(s), s[-1])]) for s in series])


def emit_plot_data(table: ResultTable, directory, prefix: str = "experiment") -> list[Path]:
    """Whitespace-separated files per (loss, algo).

    ``<prefix>_<loss>_<algo>_min_dist.dat`` holds step, mean and standard
    deviation over runs of the min-distance series and the best run's
    series; ``..._log10_loss.dat`` holds the same for ``log10(loss)``.
    Runs that stopped early are padded with their last value.
    """
    if not table.rows:
        raise ValueError("cannot plot an empty table")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for loss, algo in table.cells():
        runs = sorted({r.run for r in table.select(loss, algo)})
        best = table.best.get((loss, algo), runs[0])
        for name, column in (("min_dist", "min_dist"), ("log10_loss", "loss_value")):
            series = []
            for k in runs:
                vals = np.array([getattr(r, column) for r in table.select(loss, algo, k)])
                if column == "loss_value":
                    with np.errstate(divide="ignore", invalid="ignore"):
                        vals = np.log10(vals)
                series.append(vals)
            data = _padded(series)
            best_row = data[runs.index(best)] if best in runs else data[0]
            path = directory / f"{prefix}_{loss}_{algo}_{name}.dat"
            with path.open("w", encoding="utf-8") as fh:
                fh.write(f"# step mean_{name} std_{name} best_{name} (best run {best})\n")
                for step in range(data.shape[1]):
                    col = data[:, step]
                    fh.write(f"{step} {_f(np.mean(col))} {_f(np.std(col))} {_f(best_row[step])}\n")
            written.append(path)
    return written


def write_settings(table: ResultTable, cfg: ExperimentConfig, path) -> Path:
    """Step sizes and the constants behind automatic ones, one cell per line."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"# config {cfg.source}\n")
        fh.write(f"# backend {cfg.backend}, steps {cfg.steps}, runs {cfg.runs}, seed {cfg.seed}\n")
        for (loss, algo), s in table.settings.items():
            extras = " ".join(f"{k}={_f(v) if isinstance(v, float) else v}" for k, v in s.items())
            best = table.best.get((loss, algo))
            fh.write(f"{loss} {algo} {extras} best_run={best}\n")
    return path
