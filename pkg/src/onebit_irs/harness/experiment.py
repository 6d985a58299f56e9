"""Monte-Carlo sweeps over SNR, pilot length, IRS size or support threshold."""

from __future__ import annotations

import csv
import io
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..baselines import FistaControls, em_bpdn_estimate, oracle_map_estimate
from ..bsbl import recover_cascaded_block
from ..channel_model import SystemConfig, build_dictionaries, generate_channels
from ..errors import ConfigError, EmptySupportError
from ..fast_inverse import structured_covariance
from ..measurement import PHASE_MODES, build_pilot_frame, observe
from ..numerics import RandomSource, derive_seed
from ..sbl import SblControls, recover_cascaded, sbl_estimate
from ..two_stage import detect_support, run_stage_one, two_stage_estimate
from .metrics import nmse, nmse_db, support_accuracy

ESTIMATORS = ("sbl", "bsbl", "two-stage", "em-bpdn", "oracle", "fast-sbl")
SWEEP_NAMES = ("snr_db", "Q", "N", "gamma_th")
CSV_HEADER = ["estimator", "sweep_name", "sweep_value", "nmse_db", "accuracy",
              "mean_iters", "mean_wall_ms", "errors", "runs"]
DETAIL_HEADER = ["estimator", "sweep_name", "sweep_value", "run", "seed", "nmse_db",
                 "accuracy", "iterations", "wall_ms", "error"]


@dataclass(frozen=True)
class ExperimentSpec:
    base: SystemConfig
    sweep_name: str
    sweep_values: tuple
    estimators: tuple = ("sbl", "bsbl", "two-stage", "em-bpdn")
    runs: int = 50
    seed: int = 0
    phase_mode: str = "random"
    redraw_pilots: bool = True
    timing: bool = True
    workers: Optional[int] = None
    name: str = "experiment"

    def __post_init__(self):
        if self.sweep_name not in SWEEP_NAMES:
            raise ConfigError(f"unknown sweep axis {self.sweep_name!r}")
        if len(self.sweep_values) == 0:
            raise ConfigError("sweep needs at least one value")
        if self.runs < 1:
            raise ConfigError(f"runs must be >= 1, got {self.runs}")
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown or not self.estimators:
            raise ConfigError(f"unknown estimators {unknown}; choose from {', '.join(ESTIMATORS)}")
        if self.phase_mode not in PHASE_MODES:
            raise ConfigError(f"unknown phase mode {self.phase_mode!r}")
        # fail early on values the scenario cannot take
        for v in self.sweep_values:
            config_for(self, v)


@dataclass
class RunRecord:
    estimator: str
    sweep_index: int
    sweep_value: float
    run: int
    seed: int
    nmse: float = float("nan")
    accuracy: Optional[float] = None
    iterations: int = 0
    wall_ms: float = 0.0
    error: str = ""


@dataclass
class ResultRow:
    estimator: str
    sweep_name: str
    sweep_value: float
    nmse: float
    nmse_db: float
    accuracy: Optional[float]
    mean_iters: float
    mean_wall_ms: float
    errors: int
    runs: int


@dataclass
class ExperimentResult:
    rows: list
    records: list
    paths: dict = field(default_factory=dict)

    def row(self, estimator: str, sweep_value) -> ResultRow:
        for r in self.rows:
            if r.estimator == estimator and np.isclose(r.sweep_value, sweep_value):
                return r
        raise KeyError((estimator, sweep_value))


def config_for(spec: ExperimentSpec, value) -> SystemConfig:
    """Scenario for one sweep value.

    An ``N`` sweep keeps ``Nx`` and the per-axis oversampling ``Gty / Ny``
    fixed and changes ``Ny``.
    """
    base = spec.base
    if spec.sweep_name == "snr_db":
        return base.replace(snr_db=float(value))
    if spec.sweep_name == "Q":
        return base.replace(Q=int(value))
    if spec.sweep_name == "gamma_th":
        return base.replace(gamma_th=float(value))
    n = int(value)
    if n % base.Nx:
        raise ConfigError(f"N={n} is not a multiple of Nx={base.Nx}")
    ny = n // base.Nx
    over = base.Gty / base.Ny
    gty = int(round(over * ny))
    if gty != over * ny:
        raise ConfigError(f"N={n} does not keep Gty/Ny={over:g} integral")
    return base.replace(Ny=ny, Gty=gty)


def _fmt_value(v) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else f"{v:g}"


def _scenario(spec: ExperimentSpec, cfg: SystemConfig, sweep_seed_index: int, run: int):
    seed = derive_seed(spec.seed, sweep_seed_index, run)
    rng = RandomSource(seed)
    dicts = build_dictionaries(cfg)
    real = generate_channels(cfg, rng)
    if spec.redraw_pilots:
        frame = build_pilot_frame(cfg, dicts, rng, spec.phase_mode)
    else:
        frame_rng = RandomSource(derive_seed(spec.seed, sweep_seed_index, 0, 1))
        frame = build_pilot_frame(cfg, dicts, frame_rng, spec.phase_mode)
    obs = observe(real, frame, cfg, rng)
    return seed, dicts, real, frame, obs


def _accuracy(real, rows, cfg) -> Optional[float]:
    if not real.on_grid:
        return None
    return support_accuracy(real.row_support, rows, cfg.Gr)


def _bsbl_rows(stage1, th) -> np.ndarray:
    try:
        return detect_support(stage1.gamma, th).rows
    except EmptySupportError:
        return np.empty(0, dtype=int)


class _Runner:
    """Evaluates every requested estimator on one scenario, sharing stage one."""

    def __init__(self, cfg, dicts, real, frame, obs):
        self.cfg, self.dicts, self.real, self.frame, self.obs = cfg, dicts, real, frame, obs
        self._stage1 = None
        self._stage1_ms = 0.0

    def stage1(self):
        if self._stage1 is None:
            t0 = time.perf_counter()
            self._stage1 = run_stage_one(self.frame, self.obs, self.cfg)
            self._stage1_ms = 1e3 * (time.perf_counter() - t0)
        return self._stage1, self._stage1_ms

    def estimate(self, name: str, gamma_th: float):
        """Return ``(H_hat, iterations, detected rows or None, wall ms)``."""
        cfg, frame, obs = self.cfg, self.frame, self.obs
        t0 = time.perf_counter()
        if name == "sbl":
            res = sbl_estimate(frame.xi, obs.r, obs.noise_var, SblControls.from_config(cfg))
            H, its, rows = recover_cascaded(res.h, self.dicts, cfg), res.iterations, None
        elif name == "fast-sbl":
            cov = structured_covariance(frame, cfg, obs.noise_var)
            res = sbl_estimate(frame.xi, obs.r, obs.noise_var, SblControls.from_config(cfg),
                               covariance=cov)
            H, its, rows = recover_cascaded(res.h, self.dicts, cfg), res.iterations, None
        elif name == "bsbl":
            st, ms = self.stage1()
            H = recover_cascaded_block(st.h, self.dicts, cfg)
            return H, st.iterations, _bsbl_rows(st, gamma_th), ms
        elif name == "two-stage":
            st, ms = self.stage1()
            t1 = time.perf_counter()
            res = two_stage_estimate(frame, obs, cfg, gamma_th=gamma_th, stage1=st)
            rows = res.support.rows if res.support is not None else np.empty(0, dtype=int)
            return res.H, res.iterations, rows, ms + 1e3 * (time.perf_counter() - t1)
        elif name == "em-bpdn":
            res = em_bpdn_estimate(frame.xi, obs.r, obs.noise_var, FistaControls.from_config(cfg))
            H, its, rows = recover_cascaded(res.h, self.dicts, cfg), res.iterations, None
        elif name == "oracle":
            res = oracle_map_estimate(frame.xi, obs.r, obs.noise_var, self.real, cfg, self.dicts)
            H, its, rows = res.H, res.iterations, None
        else:
            raise ConfigError(f"unknown estimator {name!r}")
        return H, its, rows, 1e3 * (time.perf_counter() - t0)


def _record(spec, name, sweep_index, value, run, seed, runner, gamma_th) -> RunRecord:
    rec = RunRecord(estimator=name, sweep_index=sweep_index, sweep_value=float(value),
                    run=run, seed=seed)
    try:
        H, its, rows, ms = runner.estimate(name, gamma_th)
        rec.nmse = nmse(runner.real.H, H)
        rec.iterations = int(its)
        rec.wall_ms = ms if spec.timing else 0.0
        if rows is not None:
            rec.accuracy = _accuracy(runner.real, rows, runner.cfg)
        if not np.isfinite(rec.nmse):
            raise FloatingPointError("non-finite NMSE")
    except Exception as exc:  # recorded and excluded from the aggregates
        rec.error = f"{type(exc).__name__}: {exc}"
        rec.nmse = float("nan")
    return rec


def run_task(spec: ExperimentSpec, sweep_index: Optional[int], run: int) -> list:
    """All records for one Monte-Carlo run.

    A threshold sweep passes ``sweep_index=None``: one scenario and one
    first stage serve every threshold value.
    """
    if spec.sweep_name == "gamma_th":
        cfg = spec.base
        seed, dicts, real, frame, obs = _scenario(spec, cfg, 0, run)
        runner = _Runner(cfg, dicts, real, frame, obs)
        out, shared = [], {}
        for i, th in enumerate(spec.sweep_values):
            for name in spec.estimators:
                if name in ("bsbl", "two-stage") or name not in shared:
                    rec = _record(spec, name, i, th, run, seed, runner, float(th))
                    shared.setdefault(name, rec)
                else:
                    base = shared[name]
                    rec = RunRecord(**{**base.__dict__, "sweep_index": i,
                                       "sweep_value": float(th)})
                out.append(rec)
        return out
    value = spec.sweep_values[sweep_index]
    cfg = config_for(spec, value)
    seed, dicts, real, frame, obs = _scenario(spec, cfg, sweep_index, run)
    runner = _Runner(cfg, dicts, real, frame, obs)
    return [_record(spec, name, sweep_index, value, run, seed, runner, cfg.gamma_th)
            for name in spec.estimators]


def _task(args):
    return run_task(*args)


def worker_count(requested: Optional[int] = None) -> int:
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("ONEBIT_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"ONEBIT_THREADS must be an integer, got {cap!r}") from None
    return max(1, n)


def aggregate(spec: ExperimentSpec, records: Sequence[RunRecord]) -> list:
    rows = []
    for i, value in enumerate(spec.sweep_values):
        for name in spec.estimators:
            recs = [r for r in records if r.sweep_index == i and r.estimator == name]
            ok = [r for r in recs if not r.error]
            errors = len(recs) - len(ok)
            if ok:
                mean = float(np.mean([r.nmse for r in ok]))
                accs = [r.accuracy for r in ok if r.accuracy is not None]
                acc = float(np.mean(accs)) if accs else None
                iters = float(np.mean([r.iterations for r in ok]))
                wall = float(np.mean([r.wall_ms for r in ok]))
            else:
                mean, acc, iters, wall = float("nan"), None, float("nan"), float("nan")
            rows.append(ResultRow(estimator=name, sweep_name=spec.sweep_name,
                                  sweep_value=float(value), nmse=mean,
                                  nmse_db=nmse_db(mean) if ok else float("nan"),
                                  accuracy=acc, mean_iters=iters, mean_wall_ms=wall,
                                  errors=errors, runs=len(ok)))
    return rows


def _f(x, digits=6) -> str:
    if x is None:
        return ""
    return f"{x:.{digits}f}"


def format_rows(rows: Sequence[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.estimator, r.sweep_name, _fmt_value(r.sweep_value), _f(r.nmse_db),
                    _f(r.accuracy), _f(r.mean_iters, 3), _f(r.mean_wall_ms, 3), r.errors,
                    r.runs])
    return buf.getvalue()


def format_records(spec: ExperimentSpec, records: Sequence[RunRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DETAIL_HEADER)
    for r in records:
        w.writerow([r.estimator, spec.sweep_name, _fmt_value(r.sweep_value), r.run, r.seed,
                    _f(nmse_db(r.nmse)) if not r.error else "", _f(r.accuracy), r.iterations,
                    _f(r.wall_ms, 3), r.error])
    return buf.getvalue()


def run_experiment(spec: ExperimentSpec, out_dir=None) -> ExperimentResult:
    """Run every (sweep value, run) task and aggregate per estimator.

    Per-run seeds come from ``derive_seed(seed, sweep_index, run)``, so serial
    and parallel execution give the same records. With ``out_dir`` the
    aggregate CSV ``<name>.csv`` and the per-run CSV ``<name>_runs.csv`` are
    written there.
    """
    if spec.sweep_name == "gamma_th":
        tasks = [(spec, None, run) for run in range(spec.runs)]
    else:
        tasks = [(spec, i, run) for i in range(len(spec.sweep_values))
                 for run in range(spec.runs)]
    workers = min(worker_count(spec.workers), len(tasks))
    if workers <= 1:
        chunks = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_task, tasks))
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=lambda r: (r.sweep_index, spec.estimators.index(r.estimator), r.run))
    rows = aggregate(spec, records)
    result = ExperimentResult(rows=rows, records=records)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        agg = out / f"{spec.name}.csv"
        det = out / f"{spec.name}_runs.csv"
        agg.write_text(format_rows(rows))
        det.write_text(format_records(spec, records))
        result.paths = {"aggregate": agg, "runs": det}
    return result
