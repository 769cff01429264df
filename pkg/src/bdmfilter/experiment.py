"""Monte-Carlo campaigns comparing the BDM filter with a plain UKF.

A campaign runs ``runs`` seeded tracking simulations for every occurrence
probability ``lambda`` and every filter, and writes:

``rmse_box_{filter}_{lambda}.csv``
    One row per run: ``run, state_rmse, pos_rmse, vb_iters_mean, vb_iters_max,
    cap_hits`` (box-plot source).
``rmse_time_{filter}_{lambda}.csv``
    One row per time step ``k``: the example run's position/state error and
    the root-mean-square of those errors across all runs.
``summary.csv``
    Medians and means of the per-run RMSEs and VB iteration statistics.
``timing.csv``
    Mean and standard deviation of per-run wall-clock seconds. Wall-clock is
    not reproducible, so this is the only file that differs between repeated
    campaigns.
``pcrb_{lambda}.csv``
    Optional PCRB series (see :func:`bdmfilter.pcrb.save_pcrb_csv`).
``plot.gp``
    A gnuplot script rendering everything above from the CSVs alone.

Run ``r`` uses the random stream ``SeedSequence(seed, spawn_key=(r,))``
regardless of ``lambda`` or worker count, so outputs are identical for any
degree of parallelism and different ``lambda`` values share their noise.
"""
from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bias import BiasHyperParams
from .filter import BdmState, VbSettings, run_bdm, run_ukf
from .gaussian import GaussianBelief, SigmaPointConfig
from .pcrb import PcrbConfig, pcrb_series, save_pcrb_csv
from .tracking import DEFAULT_X0, BiasScenario, SensorArray, TurnModelParams, simulate, tracking_model

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunResult",
    "CampaignResult",
    "rmse",
    "run_single",
    "run_campaign",
    "run_pcrb",
    "emit_plots",
    "lambda_tag",
]

FILTERS = ("bdm", "ukf")
POSITION = (0, 2)


class ConfigError(ValueError):
    """Invalid experiment configuration (message names the offending field)."""


def lambda_tag(lam: float) -> str:
    """File-name tag for an occurrence probability, e.g. ``0.8``."""
    return repr(float(lam))


@dataclass(frozen=True)
class ExperimentConfig:
    """Full parameterization of a campaign; defaults follow the reference setup.

    Parameter names follow their usual symbols (``eta1``, ``Lambda``,
    ``sigma_o``, ``tau`` ...). In a JSON config file the list of occurrence
    probabilities may be given as ``lambda`` (number or list).
    """

    case: str = "persistent"
    lambdas: tuple = (0.2, 0.4, 0.6, 0.8)
    runs: int = 100
    steps: int = 400
    filters: tuple = FILTERS
    seed: int = 0
    out: str = "results"
    workers: int = 1
    example_run: int = 0
    # tracking model
    zeta_t: float = 1.0
    eta1: float = 0.1
    eta2: float = 1.75e-4
    x0: tuple = DEFAULT_X0
    sensors: int = 4
    sensor_spacing: float = 350.0
    r_var: float = 4.0
    # bias scenario
    Lambda: float = 90.0
    sigma_o: float = 0.4
    onset: int = 100
    offset: int = 130
    # BDM filter
    tau: float = 1e-4
    max_iters: int = 50
    theta_prior: float = 0.5
    sigma_tilde_scale: float = 1000.0
    sigma_breve_scale: float = 0.1
    sigma0: float = 1e-3
    bias_init: str = "evidence"
    # unscented transform
    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = 0.0
    # PCRB
    pcrb: bool = False
    n_mc1: int = 100
    n_mc2: int = 100
    n_mc3: int = 100
    n_mc4: int = 100

    def __post_init__(self):
        lams = self.lambdas
        if np.isscalar(lams):
            lams = (lams,)
        object.__setattr__(self, "lambdas", tuple(float(v) for v in lams))
        filt = self.filters
        if isinstance(filt, str):
            filt = tuple(f for f in filt.split(",") if f)
        object.__setattr__(self, "filters", tuple(filt))
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        self.validate()

    def validate(self) -> None:
        def bad(name, why):
            raise ConfigError(f"field '{name}': {why}")

        if self.case not in ("persistent", "momentary", "none"):
            bad("case", f"must be persistent, momentary or none, got {self.case!r}")
        if not self.lambdas:
            bad("lambda", "at least one value is required")
        for lam in self.lambdas:
            if not 0.0 <= lam <= 1.0:
                bad("lambda", f"{lam} is outside [0, 1]")
        for name in ("runs", "steps", "workers", "sensors", "max_iters",
                     "n_mc1", "n_mc2", "n_mc3", "n_mc4"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                bad(name, f"must be a positive integer, got {v!r}")
        unknown = [f for f in self.filters if f not in FILTERS]
        if unknown:
            bad("filters", f"unknown filter(s) {unknown}; choose from {list(FILTERS)}")
        if len(set(self.filters)) != len(self.filters):
            bad("filters", "duplicate entries")
        if not 0 <= self.example_run < self.runs:
            bad("example_run", "must index one of the runs")
        for name in ("zeta_t", "eta1", "eta2", "r_var", "sensor_spacing", "tau",
                     "sigma_tilde_scale", "sigma0", "alpha"):
            if not getattr(self, name) > 0:
                bad(name, "must be positive")
        for name in ("sigma_o", "sigma_breve_scale"):
            if not getattr(self, name) >= 0:
                bad(name, "must be non-negative")
        if not 0.0 <= self.theta_prior <= 1.0:
            bad("theta_prior", "must lie in [0, 1]")
        if len(self.x0) != 5:
            bad("x0", "must have 5 entries")
        if self.onset >= self.offset:
            bad("onset", "must precede offset")
        if self.bias_init not in ("evidence", "update", "predict"):
            bad("bias_init", "must be evidence, update or predict")

    # -- construction helpers -------------------------------------------------
    @classmethod
    def from_dict(cls, data: dict, **overrides) -> "ExperimentConfig":
        data = dict(data)
        if "lambda" in data:
            if "lambdas" in data:
                raise ConfigError("give either 'lambda' or 'lambdas', not both")
            data["lambdas"] = data.pop("lambda")
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown field(s) {unknown}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        try:
            return cls.from_dict(data, **overrides)
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        d["filters"] = list(self.filters)
        d["x0"] = list(self.x0)
        return d

    # -- derived objects ------------------------------------------------------
    def turn_params(self) -> TurnModelParams:
        return TurnModelParams(self.zeta_t, self.eta1, self.eta2, self.x0)

    def sensor_array(self) -> SensorArray:
        return SensorArray.rectangle(self.sensors, self.sensor_spacing, self.r_var)

    def scenario(self, lam: float) -> BiasScenario:
        return BiasScenario(self.case, lam, self.Lambda, self.sigma_o, self.onset, self.offset)

    def hyper_params(self, R) -> BiasHyperParams:
        return BiasHyperParams.from_noise(R, self.sigma_tilde_scale, self.sigma_breve_scale, self.theta_prior)

    def vb_settings(self) -> VbSettings:
        return VbSettings(self.tau, self.max_iters, self.bias_init)

    def sigma_point_config(self) -> SigmaPointConfig:
        return SigmaPointConfig(self.alpha, self.beta, self.kappa)

    def pcrb_config(self) -> PcrbConfig:
        return PcrbConfig(self.n_mc1, self.n_mc2, self.n_mc3, self.n_mc4)

    def run_seed(self, run: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=self.seed, spawn_key=(run,))


@dataclass
class RunResult:
    """Outcome of one filter on one simulated run."""

    run: int
    filter: str
    lam: float
    pos_series: np.ndarray
    state_series: np.ndarray
    pos_rmse: float
    state_rmse: float
    seconds: float
    vb_iters_mean: float = 0.0
    vb_iters_max: int = 0
    cap_hits: int = 0


@dataclass
class CampaignResult:
    config: ExperimentConfig
    results: list
    files: list = field(default_factory=list)

    def select(self, filter: str, lam: float) -> list:
        return [r for r in self.results if r.filter == filter and r.lam == lam]


def rmse(series_est, series_truth, components: Optional[Sequence[int]] = None):
    """Per-step error norm and aggregate RMSE.

    The per-step value is the Euclidean norm of the error over
    ``components`` (all by default); the aggregate is the root of the mean
    squared per-step value.
    """
    est = np.atleast_2d(np.asarray(series_est, dtype=float))
    tru = np.atleast_2d(np.asarray(series_truth, dtype=float))
    if est.shape != tru.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {tru.shape}")
    err = est - tru
    if components is not None:
        err = err[:, list(components)]
    per_step = _scaled_norm(err, axis=1)
    return per_step, float(_scaled_norm(per_step, axis=0) / np.sqrt(per_step.size))


def _scaled_norm(a, axis):
    # divide by the largest magnitude first so tiny errors do not underflow
    scale = np.max(np.abs(a), axis=axis, keepdims=True)
    safe = np.where(scale > 0, scale, 1.0)
    return np.squeeze(scale, axis=axis) * np.sqrt(np.sum((a / safe) ** 2, axis=axis))


def run_single(config: ExperimentConfig, lam: float, run: int) -> list:
    """Simulate run ``run`` at ``lam`` and apply every configured filter."""
    params, sensors = config.turn_params(), config.sensor_array()
    model = tracking_model(params, sensors)
    traj = simulate(params, sensors, config.scenario(lam), config.steps, config.run_seed(run))
    x0 = np.asarray(params.x0)
    cfg = config.sigma_point_config()
    out = []
    for name in config.filters:
        t0 = time.perf_counter()
        if name == "bdm":
            init = BdmState.initial(x0, model.Q, sensors.m, config.sigma0, config.theta_prior)
            means, _, iters, capped = run_bdm(model, init, traj.biased_measurements,
                                              config.hyper_params(sensors.R), config.vb_settings(), cfg)
            stats = dict(vb_iters_mean=float(iters.mean()), vb_iters_max=int(iters.max()),
                         cap_hits=int(capped.sum()))
        else:
            means = run_ukf(model, GaussianBelief(x0, model.Q), traj.biased_measurements, cfg)
            stats = {}
        seconds = time.perf_counter() - t0
        pos, pos_rmse = rmse(means, traj.states, POSITION)
        full, state_rmse = rmse(means, traj.states)
        out.append(RunResult(run, name, float(lam), pos, full, pos_rmse, state_rmse, seconds, **stats))
    return out


def _task(args):
    config, lam, run = args
    return run_single(config, lam, run)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())
    return path


def _execute(config: ExperimentConfig, tasks):
    if config.workers == 1:
        return [_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(_task, tasks))


def run_campaign(config: ExperimentConfig, write: bool = True) -> CampaignResult:
    """Run every (lambda, run) task and write the campaign files to ``config.out``."""
    if write and not config.filters:
        raise ValueError("nothing to plot")
    tasks = [(config, lam, run) for lam in config.lambdas for run in range(config.runs)]
    results = [r for batch in _execute(config, tasks) for r in batch]
    results.sort(key=lambda r: (config.lambdas.index(r.lam), config.filters.index(r.filter), r.run))
    campaign = CampaignResult(config, results)
    if write:
        campaign.files = _write_outputs(campaign)
    return campaign


def _write_outputs(campaign: CampaignResult) -> list:
    config = campaign.config
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    summary, timing = [], []
    for lam in config.lambdas:
        tag = lambda_tag(lam)
        for name in config.filters:
            rs = campaign.select(name, lam)
            files.append(_write_csv(
                out / f"rmse_box_{name}_{tag}.csv",
                ["run", "state_rmse", "pos_rmse", "vb_iters_mean", "vb_iters_max", "cap_hits"],
                [[r.run, r.state_rmse, r.pos_rmse, r.vb_iters_mean, r.vb_iters_max, r.cap_hits] for r in rs],
            ))
            ex = rs[config.example_run]
            pos_all = np.array([r.pos_series for r in rs])
            full_all = np.array([r.state_series for r in rs])
            pos_ms = np.sqrt(np.mean(pos_all**2, axis=0))
            full_ms = np.sqrt(np.mean(full_all**2, axis=0))
            files.append(_write_csv(
                out / f"rmse_time_{name}_{tag}.csv",
                ["k", "pos_err", "state_err", "pos_rmse_all", "state_rmse_all"],
                [[k + 1, ex.pos_series[k], ex.state_series[k], pos_ms[k], full_ms[k]]
                 for k in range(config.steps)],
            ))
            state = np.array([r.state_rmse for r in rs])
            pos = np.array([r.pos_rmse for r in rs])
            summary.append([tag, name, len(rs), float(np.median(state)), float(np.mean(state)),
                            float(np.median(pos)), float(np.mean(pos)),
                            float(np.mean([r.vb_iters_mean for r in rs])),
                            int(max(r.vb_iters_max for r in rs)), int(sum(r.cap_hits for r in rs))])
            secs = np.array([r.seconds for r in rs])
            timing.append([tag, name, len(rs), float(secs.mean()), float(secs.std())])
    files.append(_write_csv(out / "summary.csv",
                            ["lambda", "filter", "runs", "median_state_rmse", "mean_state_rmse",
                             "median_pos_rmse", "mean_pos_rmse", "vb_iters_mean", "vb_iters_max",
                             "cap_hits"], summary))
    files.append(_write_csv(out / "timing.csv",
                            ["lambda", "filter", "runs", "mean_seconds", "std_seconds"], timing))
    if config.pcrb:
        files.extend(run_pcrb(config))
    files.append(emit_plots(out, config.filters, config.lambdas))
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    files.append(out / "config.json")
    return files


def run_pcrb(config: ExperimentConfig) -> list:
    """Write ``pcrb_{lambda}.csv`` for every configured ``lambda``."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    params = config.turn_params()
    model = tracking_model(params, config.sensor_array())
    files = []
    for lam in config.lambdas:
        bounds = pcrb_series(model, config.scenario(lam), config.steps, config.pcrb_config(),
                             seed=np.random.SeedSequence(entropy=config.seed, spawn_key=(2**31,)),
                             x0=params.x0)
        path = out / f"pcrb_{lambda_tag(lam)}.csv"
        save_pcrb_csv(bounds, path, POSITION)
        files.append(path)
    return files


_BOX_PANEL = """set title "lambda = {lam}"
set xrange [0.5:{nf}.5]
set xtics ({xtics})
plot {series}
"""

_TIME_PANEL = """set title "lambda = {lam}"
plot {series}
"""


def emit_plots(out_dir, filters: Sequence[str], lambdas: Sequence[float]) -> Path:
    """Write ``plot.gp`` rendering box plots and error-vs-time overlays.

    The script reads only the CSVs in ``out_dir`` and writes
    ``rmse_box.png`` and ``rmse_time.png`` there (``gnuplot plot.gp`` from
    inside the directory). PCRB curves are overlaid where ``pcrb_*.csv``
    files exist.
    """
    filters = list(filters)
    lambdas = list(lambdas)
    if not filters:
        raise ValueError("nothing to plot")
    if not lambdas:
        raise ValueError("nothing to plot: no lambda values")
    out = Path(out_dir)
    missing = [f"rmse_box_{f}_{lambda_tag(l)}.csv" for l in lambdas for f in filters
               if not (out / f"rmse_box_{f}_{lambda_tag(l)}.csv").exists()]
    if missing:
        raise FileNotFoundError(f"missing inputs in {out}: {', '.join(missing)}")

    nl, nf = len(lambdas), len(filters)
    parts = [
        "# Regenerates the campaign figures from the CSV files in this directory.",
        "# Usage: gnuplot plot.gp",
        "set datafile separator ','",
        "set key top right",
        "set style fill solid 0.3 border -1",
        "set style boxplot outliers pointtype 7",
        "set style data boxplot",
        "",
        "set terminal pngcairo size {w},480 enhanced".format(w=360 * nl),
        "set output 'rmse_box.png'",
        f"set multiplot layout 1,{nl} title 'Full-state RMSE per run'",
        "set ylabel 'RMSE'",
        "unset key",
    ]
    for lam in lambdas:
        tag = lambda_tag(lam)
        xtics = ", ".join(f'"{f}" {i + 1}' for i, f in enumerate(filters))
        series = ", \\\n     ".join(
            f"'rmse_box_{f}_{tag}.csv' using ({i + 1}):2 skip 1" for i, f in enumerate(filters))
        parts.append(_BOX_PANEL.format(lam=tag, nf=nf, xtics=xtics, series=series))
    parts += ["unset multiplot", "",
              "set style data lines",
              "set key top right",
              "unset xrange",
              "set xtics auto",
              "set terminal pngcairo size {w},480 enhanced".format(w=360 * nl),
              "set output 'rmse_time.png'",
              f"set multiplot layout 1,{nl} title 'Position RMSE across runs vs time'",
              "set xlabel 'k'",
              "set ylabel 'RMSE'",
              "set logscale y"]
    for lam in lambdas:
        tag = lambda_tag(lam)
        series = [f"'rmse_time_{f}_{tag}.csv' using 1:4 skip 1 title '{f}'" for f in filters]
        if (out / f"pcrb_{tag}.csv").exists():
            series.append(f"'pcrb_{tag}.csv' using 1:7 skip 1 title 'PCRB' dashtype 2")
        parts.append(_TIME_PANEL.format(lam=tag, series=", \\\n     ".join(series)))
    parts.append("unset multiplot")
    path = out / "plot.gp"
    path.write_text("\n".join(parts) + "\n")
    return path
