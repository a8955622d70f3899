"""Sequential-filtering experiments: run cells, aggregate RMSE, emit files.

A cell is one (filter, ensemble size, Monte Carlo index) combination.  The
truth/observation realization depends only on (master seed, MC index), so
every filter and ensemble size sees the same data within a run; ensemble
initialization and filter randomness get their own keyed substreams.  Cells
are independent and may run in a process pool; aggregation is order-fixed,
so parallel runs reproduce serial output bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .discriminators import AlwaysAccept, ClassicalIkeda, FlowDensity, ResampleSafeguards
from .dynamics import (
    LORENZ_FIXED_POINT,
    IkedaParams,
    Lorenz63Params,
    ObservationModel,
    Propagator,
    simulate_truth,
)
from .errors import ConfigurationError, FilterDivergenceError, SingularCovarianceError
from .filters import DIEnGMF, EnGMF, EnKF, filter_step
from .model_io import load_model
from .rng import RngStream

DIVERGENCE_RMSE = 1e3

DESK_DEFAULTS = {
    "ikeda": {
        "steps": 1100, "spinup": 100, "dt": 1.0,
        "truth_init": [1.25, 0.0], "prior_var": 0.25,
        "obs_center": [0.0, 0.0],
        "ensemble_sizes": [3, 4, 5, 7, 10, 15, 20],
        "paper_ensemble_sizes": list(range(3, 21)),
    },
    "lorenz63": {
        "steps": 550, "spinup": 50, "dt": 0.12,
        "truth_init": [8.0, 0.0, 0.0], "prior_var": 1.0,
        "obs_center": LORENZ_FIXED_POINT.tolist(),
        "ensemble_sizes": [10, 20, 50, 100, 200],
        "paper_ensemble_sizes": [10, 25, 50, 75, 100, 150, 200],
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved description of one experiment."""

    system: str
    steps: int
    spinup: int
    dt: float
    substep: float
    integrator: str
    obs_center: tuple
    noise_var: float
    truth_init: tuple
    prior_var: float
    s_beta: float
    seed: int
    monte_carlo: int
    ensemble_sizes: tuple
    filters: tuple  # of dicts
    ikeda_u: float = 0.9
    paper_ensemble_sizes: tuple = ()
    paper_monte_carlo: int = 32

    def __post_init__(self):
        if self.spinup >= self.steps:
            raise ConfigurationError("spinup must be smaller than total steps")
        if any(n < 2 for n in self.ensemble_sizes):
            raise ConfigurationError("ensemble sizes must be >= 2")
        if self.monte_carlo < 1:
            raise ConfigurationError("monte_carlo must be >= 1")
        if not self.filters:
            raise ConfigurationError("at least one filter is required")

    def propagator(self) -> Propagator:
        return Propagator(
            self.system, dt=self.dt, h=self.substep, method=self.integrator,
            ikeda=IkedaParams(self.ikeda_u), lorenz=Lorenz63Params(),
        )

    def observation(self) -> ObservationModel:
        return ObservationModel(np.asarray(self.obs_center), self.noise_var)

    def at_paper_scale(self) -> "ExperimentConfig":
        sizes = self.paper_ensemble_sizes or self.ensemble_sizes
        return replace(self, monte_carlo=self.paper_monte_carlo,
                       ensemble_sizes=tuple(sizes))


def load_experiment_config(path) -> ExperimentConfig:
    """Parse and validate a JSON experiment config (schema version 1)."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read experiment config {path}: {exc}") from exc
    return parse_experiment_config(raw, base_dir=path.parent)


def parse_experiment_config(raw: dict, base_dir=None) -> ExperimentConfig:
    if raw.get("version") != 1:
        raise ConfigurationError("experiment config must declare version: 1")
    system = raw.get("system")
    if system not in DESK_DEFAULTS:
        raise ConfigurationError(f"unknown system {system!r}")
    defaults = DESK_DEFAULTS[system]
    obs = raw.get("observation", {})
    filters = []
    for entry in raw.get("filters", []):
        entry = dict(entry)
        if entry.get("kind") not in {"enkf", "engmf", "di-engmf"}:
            raise ConfigurationError(f"unknown filter kind {entry.get('kind')!r}")
        disc = entry.get("discriminator")
        if disc and disc.get("kind") == "normalizing-flow" and base_dir is not None:
            model = Path(disc["model"])
            if not model.is_absolute():
                disc = dict(disc, model=str((base_dir / model).resolve()))
                entry["discriminator"] = disc
        filters.append(entry)
    try:
        return ExperimentConfig(
            system=system,
            steps=raw.get("steps", defaults["steps"]),
            spinup=raw.get("spinup", defaults["spinup"]),
            dt=raw.get("dt", defaults["dt"]),
            substep=raw.get("substep", 0.01),
            integrator=raw.get("integrator", "rk4"),
            obs_center=tuple(obs.get("center", defaults["obs_center"])),
            noise_var=obs.get("noise_var", 4.0),
            truth_init=tuple(raw.get("truth_init", defaults["truth_init"])),
            prior_var=raw.get("prior_var", defaults["prior_var"]),
            s_beta=raw.get("s_beta", 1.0),
            seed=raw.get("seed", 0),
            monte_carlo=raw.get("monte_carlo", 8),
            ensemble_sizes=tuple(raw.get("ensemble_sizes", defaults["ensemble_sizes"])),
            filters=tuple(filters),
            ikeda_u=raw.get("ikeda_u", 0.9),
            paper_ensemble_sizes=tuple(
                raw.get("paper_ensemble_sizes", defaults["paper_ensemble_sizes"])
            ),
            paper_monte_carlo=raw.get("paper_monte_carlo", 32),
        )
    except TypeError as exc:
        raise ConfigurationError(f"malformed experiment config: {exc}") from exc


_MODEL_CACHE: dict = {}


def build_filter(entry: dict, config: ExperimentConfig):
    """Instantiate a filter from its config entry (flow models are cached)."""
    kind = entry["kind"]
    label = entry.get("label", kind)
    if kind == "enkf":
        return EnKF(inflation=entry.get("inflation", 1.01), label=label)
    if kind == "engmf":
        return EnGMF(s_beta=entry.get("s_beta", config.s_beta), label=label)
    disc_cfg = entry.get("discriminator", {"kind": "always-accept"})
    disc = _build_discriminator(disc_cfg, config)
    sg_cfg = entry.get("safeguards", {})
    safeguards = ResampleSafeguards(
        baseline_accept=sg_cfg.get("baseline_accept", 0.0),
        max_rejections=sg_cfg.get("max_rejections", 100),
    )
    return DIEnGMF(
        discriminator=disc,
        safeguards=safeguards,
        s_beta=entry.get("s_beta", config.s_beta),
        label=label,
    )


def _build_discriminator(cfg: dict, config: ExperimentConfig):
    kind = cfg.get("kind")
    if kind == "always-accept":
        return AlwaysAccept()
    if kind == "classical-ikeda":
        return ClassicalIkeda(m=cfg.get("m", 6), params=IkedaParams(config.ikeda_u))
    if kind == "normalizing-flow":
        path = cfg["model"]
        if path not in _MODEL_CACHE:
            _MODEL_CACHE[path] = load_model(path)
        flow, info = _MODEL_CACHE[path]
        if info.log_tau is None:
            raise ConfigurationError(f"model {path} is not calibrated (run `calibrate`)")
        return FlowDensity(flow, info.log_tau)
    raise ConfigurationError(f"unknown discriminator kind {kind!r}")


def rmse(truth: np.ndarray, analysis_means: np.ndarray, spinup: int) -> float:
    """Spatio-temporal RMSE over post-spinup steps.

    Both trajectories must have equal length strictly greater than `spinup`;
    the Monte Carlo average over runs happens in the aggregator, not here.
    """
    truth = np.asarray(truth, dtype=float)
    analysis_means = np.asarray(analysis_means, dtype=float)
    if truth.shape != analysis_means.shape:
        raise ConfigurationError("truth and analysis trajectories differ in shape")
    if truth.shape[0] <= spinup:
        raise ConfigurationError("trajectory not longer than spinup")
    diff = truth[spinup:] - analysis_means[spinup:]
    return float(np.sqrt(np.mean(diff**2)))


@dataclass
class RunRecord:
    """Outcome of a single (filter, N, seed) cell."""

    filter_label: str
    n_members: int
    mc_index: int
    rmse: float
    rejections: int
    exhausted: int
    diverged: bool


def run_single(config: ExperimentConfig, filter_entry: dict, n_members: int,
               mc_index: int) -> RunRecord:
    """One sequential-filtering run; divergence is flagged, never raised."""
    root = RngStream(config.seed)
    propagator = config.propagator()
    obs = config.observation()
    truth, observations = simulate_truth(
        root.split("truth", mc_index),
        np.asarray(config.truth_init, dtype=float),
        propagator, config.steps, obs,
    )

    dim = len(config.truth_init)
    ens_rng = root.split("ensemble", mc_index, n_members)
    ensemble = np.asarray(config.truth_init) + math.sqrt(config.prior_var) * \
        ens_rng.standard_normal((n_members, dim))

    filt = build_filter(filter_entry, config)
    filt_rng = root.split("filter", mc_index, n_members)

    means = np.full((config.steps, dim), np.nan)
    rejections = 0
    exhausted = 0
    diverged = False
    try:
        for k in range(config.steps):
            ensemble, stats = filter_step(
                filt_rng, filt, ensemble, observations[k], obs, propagator
            )
            if not np.isfinite(ensemble).all():
                diverged = True
                break
            if stats is not None:
                rejections += stats.total_rejections
                exhausted += stats.exhausted
            means[k] = ensemble.mean(axis=0)
    except (FilterDivergenceError, SingularCovarianceError, FloatingPointError):
        diverged = True

    score = float("nan")
    if not diverged:
        score = rmse(truth, means, config.spinup)
        if not math.isfinite(score) or score > DIVERGENCE_RMSE:
            diverged = True
    return RunRecord(
        filter_label=filter_entry.get("label", filter_entry["kind"]),
        n_members=n_members,
        mc_index=mc_index,
        rmse=score,
        rejections=rejections,
        exhausted=exhausted,
        diverged=diverged,
    )


def _run_cell(args) -> RunRecord:
    config, filter_entry, n_members, mc_index = args
    return run_single(config, filter_entry, n_members, mc_index)


def run_experiment(config: ExperimentConfig, threads: int = 1,
                   progress: bool = False) -> list[RunRecord]:
    """Run every (filter, N, seed) cell; order of the result list is fixed."""
    cells = [
        (config, entry, n, mc)
        for entry in config.filters
        for n in config.ensemble_sizes
        for mc in range(config.monte_carlo)
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(_run_cell, cells, chunksize=1))
    else:
        records = []
        for i, cell in enumerate(cells):
            records.append(_run_cell(cell))
            if progress:
                print(f"  cell {i + 1}/{len(cells)}: {records[-1].filter_label} "
                      f"N={records[-1].n_members} seed={records[-1].mc_index} "
                      f"rmse={records[-1].rmse:.4g}", flush=True)
    return records


@dataclass
class SummaryRow:
    filter_label: str
    n_members: int
    mean_rmse: float
    stddev: float
    sem: float
    runs: int
    diverged: int


def summarize(records: list[RunRecord]) -> list[SummaryRow]:
    """Per-(filter, N) mean/stddev/SEM over non-diverged runs."""
    order: list[tuple] = []
    groups: dict[tuple, list[RunRecord]] = {}
    for rec in records:
        key = (rec.filter_label, rec.n_members)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(rec)
    rows = []
    for key in order:
        group = groups[key]
        scores = np.array([r.rmse for r in group if not r.diverged])
        n_runs = scores.size
        if n_runs == 0:
            mean = std = sem = float("nan")
        else:
            mean = float(scores.mean())
            std = float(scores.std(ddof=1)) if n_runs > 1 else 0.0
            sem = std / math.sqrt(n_runs) if n_runs > 1 else 0.0
        rows.append(SummaryRow(key[0], key[1], mean, std, sem,
                               n_runs, sum(r.diverged for r in group)))
    return rows


def _fmt(x: float) -> str:
    return format(x, ".17g")


def write_runs_csv(records: list[RunRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filter", "N", "seed", "rmse", "rejections", "exhausted",
                         "diverged"])
        for r in records:
            writer.writerow([r.filter_label, r.n_members, r.mc_index, _fmt(r.rmse),
                             r.rejections, r.exhausted, int(r.diverged)])


def write_summary_csv(rows: list[SummaryRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filter", "N", "mean_rmse", "stddev", "sem", "runs",
                         "diverged"])
        for r in rows:
            writer.writerow([r.filter_label, r.n_members, _fmt(r.mean_rmse),
                             _fmt(r.stddev), _fmt(r.sem), r.runs, r.diverged])


def plot_summary(rows: list[SummaryRow], path, error_bars: str = "std") -> None:
    """RMSE versus ensemble size, one series per filter, as a static SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels: list[str] = []
    for r in rows:
        if r.filter_label not in labels:
            labels.append(r.filter_label)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label in labels:
        series = [r for r in rows if r.filter_label == label]
        ns = [r.n_members for r in series]
        means = [r.mean_rmse for r in series]
        if error_bars == "sem3":
            bars = [3 * r.sem for r in series]
        else:
            bars = [r.stddev for r in series]
        ax.errorbar(ns, means, yerr=bars, marker="o", capsize=3, label=label)
    ax.set_xlabel("ensemble size N")
    ax.set_ylabel("RMSE")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def emit_outputs(records: list[RunRecord], out_dir, error_bars: str = "std"
                 ) -> dict[str, str]:
    """Write runs.csv, summary.csv and rmse_vs_N.svg; returns their paths."""
    if not records:
        raise ConfigurationError("no results to emit")
    out_dir = Path(out_dir)
    try:
        os.makedirs(out_dir, exist_ok=True)
        rows = summarize(records)
        paths = {
            "runs": str(out_dir / "runs.csv"),
            "summary": str(out_dir / "summary.csv"),
            "plot": str(out_dir / "rmse_vs_N.svg"),
        }
        write_runs_csv(records, paths["runs"])
        write_summary_csv(rows, paths["summary"])
        plot_summary(rows, paths["plot"], error_bars)
    except OSError as exc:
        raise OSError(f"failed writing outputs under {out_dir}: {exc}") from exc
    return paths
