"""Experiment runner: JSON configs, per-seed raw CSV, aggregates, run manifests.

Every experiment is a function ``(seed, params, solver) -> list[row]``; rows of
all seeds are merged in seed order, so the raw CSV is independent of how the
seeds were scheduled.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import io
import json
import logging
import math
import platform
import re
import time
from pathlib import Path
from typing import Any, Callable, Optional, Sequence, Union, get_args, get_origin, get_type_hints

import jsonschema
import numpy as np

from . import __version__
from .beamforming import (
    GsbfSettings,
    InfeasibleError,
    exhaustive_oracle,
    fixed_direction_maxmin,
    gsbf,
    maxmin_rate,
    powermin,
)
from .csi import EstimationConfig, mixed_csi_from_instance, run_estimation_experiment, scenario_count, scenario_scb, tune_lambdas
from .io import outcome_to_dict, read_program
from .network import make_instance, with_snr
from .solver import SolverSettings, Status, solve
from .stuffing import BeamformingData, Dims, Family, build_template, canonicalize_reference, stuff

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1


class ConfigError(ValueError):
    """Invalid experiment configuration; the message is anchored to a file line."""


# --- parameter blocks --------------------------------------------------------


@dataclasses.dataclass
class SolverParams:
    eps: float = 1e-6
    max_iters: int = 20000
    check_interval: int = 5

    def settings(self) -> SolverSettings:
        return SolverSettings(
            eps_primal=self.eps, eps_dual=self.eps, eps_gap=self.eps,
            max_iters=self.max_iters, check_interval=self.check_interval,
        )


@dataclasses.dataclass
class GsbfSweepParams:
    L: int = 10
    antennas: int = 2
    K: int = 15
    sinr_db: list[float] = dataclasses.field(default_factory=lambda: [0.0, 2.0, 4.0, 6.0])
    fronthaul_w: Optional[list[float]] = None  # None: (5 + l) W
    p_max_w: float = 1.0
    noise_dbm: float = -102.0
    region_half_width: float = 1000.0
    weight_exponent: float = 0.5
    order_exponent: float = 0.5
    gain_exponent: float = 0.0
    oracle: bool = False  # also run the exhaustive search (small L only)


@dataclasses.dataclass
class MaxminParams:
    L: int = 6
    antennas: int = 2
    K: int = 4
    snr_db: list[float] = dataclasses.field(default_factory=lambda: [0.0, 10.0, 20.0])
    tol: float = 1e-2
    noise_dbm: float = -102.0
    region_half_width: float = 1000.0


@dataclasses.dataclass
class ChanestParams:
    d: int = 100
    m: list[int] = dataclasses.field(default_factory=lambda: [50])
    eta: float = 0.99
    length: int = 10
    snr_db: float = 20.0
    lam1_grid: list[float] = dataclasses.field(default_factory=lambda: [0.003, 0.01, 0.03, 0.1, 0.3, 1.0])
    lam2_grid: list[float] = dataclasses.field(default_factory=lambda: [0.03, 0.1, 0.3, 1.0, 3.0])
    tuning_seeds: int = 3
    strong_fraction: float = 0.2


@dataclasses.dataclass
class ScenarioParams:
    L: int = 3
    antennas: int = 2
    K: int = 2
    sinr_db: float = 0.0
    eps: float = 0.1
    beta: float = 0.01
    M: list[Union[int, str]] = dataclasses.field(default_factory=lambda: [1, 20, 100, "bound"])
    budget: int = 10  # trained links
    error_fraction: float = 0.05
    n_eval: int = 10000
    p_max_w: float = 1.0
    noise_dbm: float = -102.0
    region_half_width: float = 500.0


@dataclasses.dataclass
class BenchParams:
    sizes: list[int] = dataclasses.field(default_factory=lambda: [20, 50])  # L = K
    antennas: int = 1
    sinr_db: float = 0.0
    warmups: int = 3
    repeats: int = 5
    solve: bool = True
    region_half_width: float = 1000.0


@dataclasses.dataclass
class SolveFileParams:
    program: str = ""


@dataclasses.dataclass
class ExperimentSpec:
    params: type
    run_seed: Callable
    columns: list[str]
    group_by: Optional[str]


# --- experiments -------------------------------------------------------------


def _gsbf_seed(seed: int, p: GsbfSweepParams, solver: SolverSettings) -> list[dict]:
    settings = GsbfSettings(solver=solver, weight_exponent=p.weight_exponent,
                            order_exponent=p.order_exponent, gain_exponent=p.gain_exponent)
    rows = []
    base = make_instance(seed, p.L, p.K, antennas=p.antennas, fronthaul_w=p.fronthaul_w, p_max_w=p.p_max_w,
                         noise_dbm=p.noise_dbm, region_half_width=p.region_half_width)
    for sinr in p.sinr_db:
        inst = base.with_gamma(10 ** (sinr / 10))
        row = {"seed": seed, "sinr_db": float(sinr), "gsbf_power_w": math.nan, "all_active_power_w": math.nan,
               "active_count": 0, "probes": 0, "indeterminate_probes": 0, "oracle_power_w": math.nan, "status": "ok"}
        full = powermin(inst, settings=solver)
        if full.feasible:
            row["all_active_power_w"] = full.network_power_w
        try:
            res = gsbf(inst, settings)
            row.update(gsbf_power_w=res.network_power_w, active_count=len(res.active_set),
                       probes=res.feasibility_probe_count, indeterminate_probes=res.indeterminate_probes)
            if p.oracle:
                row["oracle_power_w"] = exhaustive_oracle(inst, solver).network_power_w
        except InfeasibleError:
            row["status"] = "infeasible"
        if row["status"] == "ok" and not full.feasible:
            row["status"] = f"all_active_{full.status.value}"
        rows.append(row)
    return rows


def _maxmin_seed(seed: int, p: MaxminParams, solver: SolverSettings) -> list[dict]:
    base = make_instance(seed, p.L, p.K, antennas=p.antennas, noise_dbm=p.noise_dbm,
                         region_half_width=p.region_half_width)
    rows = []
    for snr in p.snr_db:
        inst = with_snr(base, snr)
        opt = maxmin_rate(inst, p.tol, solver)
        mrt = fixed_direction_maxmin(inst, "MRT", p.tol, solver)
        zf = fixed_direction_maxmin(inst, "ZF", p.tol, solver) if inst.N >= inst.K else None
        rows.append({
            "seed": seed, "snr_db": float(snr),
            "optimal_rate": opt.rate, "mrt_rate": mrt.rate, "zf_rate": zf.rate if zf else math.nan,
            "optimal_gamma": opt.gamma, "mrt_gamma": mrt.gamma, "zf_gamma": zf.gamma if zf else math.nan,
            "probes": opt.probes,
        })
    return rows


def _estimation_config(p: ChanestParams, m: int) -> EstimationConfig:
    return EstimationConfig(d=p.d, m=m, eta=p.eta, length=p.length, snr_db=p.snr_db,
                            lam1_grid=tuple(p.lam1_grid), lam2_grid=tuple(p.lam2_grid),
                            tuning_seeds=p.tuning_seeds, strong_fraction=p.strong_fraction)


def _chanest_lambdas(p: ChanestParams) -> dict:
    return {m: tune_lambdas(_estimation_config(p, m)) for m in p.m}


def _chanest_seed(seed: int, p: ChanestParams, solver: SolverSettings, lambdas: Optional[dict] = None) -> list[dict]:
    rows = []
    for m in p.m:
        cfg = _estimation_config(p, m)
        lam = lambdas[m] if lambdas else tune_lambdas(cfg)
        for r in run_estimation_experiment(cfg, [seed], lam):
            rows.append({"seed": seed, "m": m, **{k: v for k, v in r.items() if k != "seed"}})
    return rows


def resolve_scenario_counts(p: ScenarioParams) -> list[int]:
    n_vars = 2 * p.L * p.antennas * p.K
    return [scenario_count(n_vars, p.eps, p.beta) if m == "bound" else int(m) for m in p.M]


def _scenario_seed(seed: int, p: ScenarioParams, solver: SolverSettings) -> list[dict]:
    inst = make_instance(seed, p.L, p.K, antennas=p.antennas, gamma_db=p.sinr_db, p_max_w=p.p_max_w,
                         noise_dbm=p.noise_dbm, region_half_width=p.region_half_width)
    mixed = mixed_csi_from_instance(inst, p.budget, p.error_fraction, seed)
    counts = resolve_scenario_counts(p)
    pool = max(counts)
    rows = []
    for M in counts:
        r = scenario_scb(mixed, M, inst, p.eps, seed=seed, n_eval=p.n_eval, settings=solver, pool=pool)
        rows.append({"seed": seed, "M": M, "status": r.status.value, "transmit_power_w": r.transmit_power_w,
                     "empirical_outage": r.empirical_outage, "max_sample_violation": r.max_sample_violation})
    return rows


def _timed(fn, warmups: int, repeats: int) -> float:
    """Median wall time over ``repeats`` runs after ``warmups`` discarded runs."""
    for _ in range(warmups):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _bench_seed(seed: int, p: BenchParams, solver: SolverSettings) -> list[dict]:
    rows = []
    for size in p.sizes:
        inst = make_instance(seed, size, size, antennas=p.antennas, gamma_db=p.sinr_db,
                             region_half_width=p.region_half_width)
        data = BeamformingData.from_instance(inst)
        dims = Dims(tuple(inst.topology.antennas), inst.K)
        t0 = time.perf_counter()
        tmpl = build_template(Family.POWER_MIN, dims)
        build = time.perf_counter() - t0
        t_tmpl = _timed(lambda: stuff(tmpl, data), p.warmups, p.repeats)
        t_ref = _timed(lambda: canonicalize_reference(Family.POWER_MIN, dims, data), p.warmups, p.repeats)
        row = {"seed": seed, "L": size, "K": size, "modeling_time_template_s": t_tmpl,
               "modeling_time_scratch_s": t_ref, "template_build_s": build, "speedup": t_ref / t_tmpl,
               "solving_time_s": math.nan, "objective_w": math.nan, "status": "skipped"}
        if p.solve:
            prog = stuff(tmpl, data)
            t0 = time.perf_counter()
            out = solve(prog, solver)
            # the PowerMin objective is the epigraph of sqrt(transmit power)
            row.update(solving_time_s=time.perf_counter() - t0, objective_w=out.objective ** 2, status=out.status.value)
        rows.append(row)
    return rows


def _solve_file_seed(seed: int, p: SolveFileParams, solver: SolverSettings) -> list[dict]:
    out = solve(read_program(p.program), solver)
    return [{"seed": seed, "status": out.status.value, "objective": out.objective, "iterations": out.iterations,
             "primal_residual": out.residuals.primal, "dual_residual": out.residuals.dual, "gap": out.residuals.gap}]


EXPERIMENTS: dict[str, ExperimentSpec] = {
    "gsbf_power_vs_sinr": ExperimentSpec(
        GsbfSweepParams, _gsbf_seed,
        ["seed", "sinr_db", "gsbf_power_w", "all_active_power_w", "active_count", "probes",
         "indeterminate_probes", "oracle_power_w", "status"], "sinr_db"),
    "maxmin_vs_snr": ExperimentSpec(
        MaxminParams, _maxmin_seed,
        ["seed", "snr_db", "optimal_rate", "mrt_rate", "zf_rate", "optimal_gamma", "mrt_gamma", "zf_gamma",
         "probes"], "snr_db"),
    "chanest_mse": ExperimentSpec(
        ChanestParams, _chanest_seed,
        ["seed", "m", "mse_ls", "mse_spatial", "mse_spatial_temporal", "energy"], "m"),
    "scenario_scb": ExperimentSpec(
        ScenarioParams, _scenario_seed,
        ["seed", "M", "status", "transmit_power_w", "empirical_outage", "max_sample_violation"], "M"),
    "bench_stuffing": ExperimentSpec(
        BenchParams, _bench_seed,
        ["seed", "L", "K", "modeling_time_template_s", "modeling_time_scratch_s", "template_build_s", "speedup",
         "solving_time_s", "objective_w", "status"], "L"),
    "solve_file": ExperimentSpec(
        SolveFileParams, _solve_file_seed,
        ["seed", "status", "objective", "iterations", "primal_residual", "dual_residual", "gap"], None),
}


# --- configuration -----------------------------------------------------------


@dataclasses.dataclass
class ExperimentConfig:
    experiment: str
    seeds: list[int]
    params: Any
    solver: SolverParams = dataclasses.field(default_factory=SolverParams)
    out: str = "results"
    workers: int = 1

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "seeds": list(self.seeds), "out": self.out, "workers": self.workers,
                "solver": dataclasses.asdict(self.solver), "params": dataclasses.asdict(self.params)}


def _type_schema(tp) -> dict:
    origin = get_origin(tp)
    if origin is Union:
        return {"anyOf": [_type_schema(a) for a in get_args(tp)]}
    if origin is list:
        (item,) = get_args(tp)
        return {"type": "array", "items": _type_schema(item)}
    if tp is type(None):
        return {"type": "null"}
    return {bool: {"type": "boolean"}, int: {"type": "integer"}, float: {"type": "number"},
            str: {"type": "string"}}[tp]


def _dataclass_schema(cls) -> dict:
    hints = get_type_hints(cls)
    props = {f.name: _type_schema(hints[f.name]) for f in dataclasses.fields(cls)}
    return {"type": "object", "properties": props, "additionalProperties": False}


def config_schema() -> dict:
    """JSON Schema for experiment configs (shipped as ``configs/schema.json``)."""
    branches = [
        {"if": {"properties": {"experiment": {"const": name}}},
         "then": {"properties": {"params": _dataclass_schema(spec.params)}}}
        for name, spec in EXPERIMENTS.items()
    ]
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "cranopt experiment config",
        "type": "object",
        "required": ["experiment", "seeds"],
        "additionalProperties": False,
        "properties": {
            "experiment": {"enum": sorted(EXPERIMENTS)},
            "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
            "params": {"type": "object"},
            "solver": _dataclass_schema(SolverParams),
            "out": {"type": "string"},
            "workers": {"type": "integer", "minimum": 1},
        },
        "allOf": branches,
    }


def _line_of(text: str, path: Sequence) -> int:
    """1-based line of the deepest key of ``path`` found in ``text`` (1 if none)."""
    pos, line = 0, 1
    for key in path:
        if not isinstance(key, str):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(key)).search(text, pos)
        if m is None:
            break
        pos = m.start()
        line = text.count("\n", 0, pos) + 1
    return line


def _error_path(err: jsonschema.ValidationError) -> list:
    path = list(err.absolute_path)
    if err.validator == "additionalProperties":
        extra = re.findall(r"'([^']+)'", err.message)
        if extra:
            path.append(extra[0])
    return path


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if isinstance(raw, dict) and "manifest_version" in raw:
        raw = raw["config"]
        text = json.dumps(raw, indent=2)
    validator = jsonschema.Draft202012Validator(config_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: (_line_of(text, _error_path(e)), e.message))
    if errors:
        lines = [f"{source}:{_line_of(text, _error_path(e))}: {e.message}" for e in errors]
        raise ConfigError("\n".join(lines))
    spec = EXPERIMENTS[raw["experiment"]]
    params = spec.params(**raw.get("params", {}))
    if raw["experiment"] == "solve_file" and not params.program:
        raise ConfigError(f"{source}:{_line_of(text, ['params'])}: solve_file needs params.program")
    return ExperimentConfig(raw["experiment"], list(raw["seeds"]), params, SolverParams(**raw.get("solver", {})),
                            raw.get("out", "results"), raw.get("workers", 1))


def load_config(path) -> ExperimentConfig:
    """Read and validate a config; a relative ``params.program`` is taken relative to the config file."""
    cfg = parse_config(Path(path).read_text(encoding="utf-8"), str(path))
    if cfg.experiment == "solve_file" and not Path(cfg.params.program).is_absolute():
        cfg.params.program = str(Path(path).resolve().parent / cfg.params.program)
    return cfg


# --- CSV ---------------------------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # shortest round-trip representation
    return str(v)


def write_csv(path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_value(r[c]) for c in columns])
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))


def read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty CSV (no header)") from None
        rows = []
        for i, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise ValueError(f"{path}:{i}: expected {len(header)} fields, found {len(rec)}")
            rows.append(dict(zip(header, rec)))
    return header, rows


def _as_float(s: str) -> Optional[float]:
    try:
        return float(s)
    except ValueError:
        return None


def aggregate(rows: Sequence[dict], columns: Sequence[str], group_by: Optional[str]) -> tuple[list[str], list[dict]]:
    """Mean and sample standard deviation of every numeric column per group (NaNs skipped)."""
    numeric = [c for c in columns if c not in ("seed", group_by)
               and rows and all(isinstance(r[c], (int, float, np.integer, np.floating)) and not isinstance(r[c], bool)
                                for r in rows)]
    header = ([group_by] if group_by else []) + ["count"] + [f"{c}_{s}" for c in numeric for s in ("mean", "std")]
    keys = sorted({r[group_by] for r in rows}) if group_by else [None]
    out = []
    for key in keys if rows else []:
        grp = [r for r in rows if group_by is None or r[group_by] == key]
        rec = {"count": len(grp)}
        if group_by:
            rec[group_by] = key
        for c in numeric:
            vals = np.array([float(r[c]) for r in grp])
            vals = vals[np.isfinite(vals)]
            rec[f"{c}_mean"] = float(vals.mean()) if len(vals) else math.nan
            rec[f"{c}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else (0.0 if len(vals) else math.nan)
        out.append(rec)
    return header, out


# --- running -----------------------------------------------------------------


def _seed_task(args):
    name, seed, params, solver_params, extra = args
    spec = EXPERIMENTS[name]
    t0 = time.perf_counter()
    rows = spec.run_seed(seed, params, solver_params.settings(), **extra)
    return seed, rows, time.perf_counter() - t0


def _versions() -> dict:
    import qdldl
    import scipy

    return {"cranopt": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "qdldl": getattr(qdldl, "__version__", "unknown")}


@dataclasses.dataclass
class RunResult:
    raw_csv: Path
    aggregate_csv: Path
    manifest: Path
    rows: list[dict]


def run(config: ExperimentConfig, out_dir=None, seed_offset: int = 0) -> RunResult:
    """Execute ``config`` over all seeds and write raw CSV, aggregate CSV and manifest."""
    spec = EXPERIMENTS[config.experiment]
    seeds = [s + seed_offset for s in config.seeds]
    cfg = dataclasses.replace(config, seeds=seeds)
    out = Path(out_dir if out_dir is not None else config.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {}
    started = time.time()
    t0 = time.perf_counter()
    if config.experiment == "chanest_mse":
        extra["lambdas"] = _chanest_lambdas(config.params)
    tasks = [(config.experiment, s, config.params, config.solver, extra) for s in seeds]
    if config.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_seed_task, tasks))
    else:
        results = [_seed_task(t) for t in tasks]
    results.sort(key=lambda r: seeds.index(r[0]))
    rows = [row for _, rs, _ in results for row in rs]
    raw = out / f"{config.experiment}_raw.csv"
    agg = out / f"{config.experiment}_aggregate.csv"
    write_csv(raw, spec.columns, rows)
    header, agg_rows = aggregate(rows, spec.columns, spec.group_by)
    write_csv(agg, header, agg_rows)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "experiment": config.experiment,
        "config": {**cfg.to_dict(), "out": str(out)},
        "versions": _versions(),
        "started_unix": started,
        "wall_time_s": time.perf_counter() - t0,
        "seed_wall_time_s": {str(s): t for s, _, t in results},
        "outputs": {"raw": raw.name, "aggregate": agg.name},
    }
    if "lambdas" in extra:
        manifest["tuned_lambdas"] = {str(m): {k: list(v) for k, v in lam.items()} for m, lam in extra["lambdas"].items()}
    if config.experiment == "scenario_scb":
        manifest["scenario_counts"] = resolve_scenario_counts(config.params)
    man = out / f"{config.experiment}_manifest.json"
    man.write_text(json.dumps(manifest, indent=2, default=format_value), encoding="utf-8")
    return RunResult(raw, agg, man, rows)


# --- plot data ---------------------------------------------------------------

# aggregate group column -> (x label, [(series, y column)])
_PIVOTS = [
    ("gsbf_power_w_mean", "sinr_db", [("GSBF", "gsbf_power_w"), ("all-active", "all_active_power_w"),
                                      ("oracle", "oracle_power_w")]),
    ("optimal_rate_mean", "snr_db", [("optimal", "optimal_rate"), ("MRT", "mrt_rate"), ("ZF", "zf_rate")]),
    ("mse_ls_mean", "m", [("LS", "mse_ls"), ("spatial", "mse_spatial"), ("spatial+temporal", "mse_spatial_temporal")]),
    ("transmit_power_w_mean", "M", [("scenario power", "transmit_power_w"), ("outage", "empirical_outage")]),
    ("modeling_time_template_s_mean", "L", [("template", "modeling_time_template_s"),
                                            ("scratch", "modeling_time_scratch_s"), ("solve", "solving_time_s")]),
]

PLOT_COLUMNS = ["x", "y", "y_std", "series"]


def emit_plot_data(aggregate_csv, out_csv) -> list[dict]:
    """Pivot an aggregate CSV into long ``x, y, y_std, series`` rows."""
    header, rows = read_csv(aggregate_csv)
    for marker, xcol, series in _PIVOTS:
        if marker in header:
            break
    else:
        raise ValueError(f"{aggregate_csv}: not a recognized aggregate CSV (header {header})")
    if xcol not in header:
        raise ValueError(f"{aggregate_csv}: missing column {xcol!r}")
    out = []
    for r in rows:
        x = _as_float(r[xcol])
        if x is None:
            raise ValueError(f"{aggregate_csv}: non-numeric {xcol} value {r[xcol]!r}")
        for name, col in series:
            if f"{col}_mean" not in header:
                continue
            y, sd = _as_float(r[f"{col}_mean"]), _as_float(r[f"{col}_std"])
            if y is None or sd is None:
                raise ValueError(f"{aggregate_csv}: non-numeric value in {col}")
            if math.isnan(y):
                continue
            out.append({"x": x, "y": y, "y_std": sd, "series": name})
    write_csv(out_csv, PLOT_COLUMNS, out)
    return out


def solve_file(path, settings: Optional[SolverSettings] = None) -> dict:
    out = solve(read_program(path), settings or SolverSettings())
    return outcome_to_dict(out)
