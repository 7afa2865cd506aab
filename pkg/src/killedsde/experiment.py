"""Pricing runs, convergence sweeps and their CSV form.

An :class:`ExperimentConfig` fully describes a study (model, contract,
transform, schemes, step counts, path count, seed). :func:`build_setup`
turns it into path kernels plus the estimator ingredients, and
:func:`run_convergence` sweeps the step counts and fits the log-log error
slope per scheme.

Benchmarks come from closed forms where one exists (Black-Scholes
down-and-out put, double knock-out call). Every other case uses a
self-benchmark: the same scheme on a dense grid with many paths, stored in
a JSON cache keyed by a hash of everything that affects the value.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import analytic
from .errors import ConfigError, KilledSDEError
from .htransform import HTransform, make_h
from .models import DiffusionModel, bs_log_from_prices, hlv_model, remove_drift
from .montecarlo import McResult, run_mc_multi
from .rng import RngSpec
from .schemes import BemKernel, BridgeKernel, EulerKernel, StepGrid

SCHEMES = ("bem", "euler", "bridge")
H_KINDS = ("quartic", "parabolic", "exp", "linear")
CSV_HEADER = ("scheme", "N", "estimate", "stderr", "benchmark", "abs_error")
DEFAULT_N_STEPS = tuple(2 ** k for k in range(1, 9))
RESOLVABLE = 3.0
CACHE_ENV = "KILLEDSDE_BENCHMARK_CACHE"
BENCHMARK_SALT = 0xBE7C


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "bs"
    sigma: float = 0.2
    nu: float = 0.2
    beta: float = 0.5
    payoff: str = "put"
    strike: float = 1.0
    lower_barrier: float = 0.8
    upper_barrier: float = math.inf
    maturity: float = 1.0
    s0: float = 1.0
    h: Optional[str] = None
    schemes: tuple = ("bem",)
    n_steps: tuple = DEFAULT_N_STEPS
    paths: int = 1_000_000
    seed: int = 0
    series_terms: int = 5
    workers: int = 1
    solver: str = "newton"
    benchmark_n_steps: int = 4096
    benchmark_paths: int = 8_000_000
    benchmark_cache: Optional[str] = None
    out: Optional[str] = None
    plot_data: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "schemes", tuple(self.schemes))
        object.__setattr__(self, "n_steps", tuple(int(n) for n in self.n_steps))
        self.validate()

    @property
    def double(self) -> bool:
        return math.isfinite(self.upper_barrier)

    @property
    def h_kind(self) -> str:
        if self.h is not None:
            return self.h
        if self.model == "hlv":
            return "parabolic"
        return "quartic" if self.double else "exp"

    def validate(self) -> None:
        def need(ok, name, msg):
            if not ok:
                raise ConfigError(name, msg)

        need(self.model in ("bs", "hlv"), "model", f"expected bs or hlv, got {self.model!r}")
        need(self.payoff in ("put", "call"), "payoff", f"expected put or call, got {self.payoff!r}")
        for name in ("sigma", "nu", "strike", "lower_barrier", "maturity", "s0"):
            v = getattr(self, name)
            need(isinstance(v, (int, float)) and math.isfinite(v) and v > 0, name,
                 f"must be a positive finite number, got {v!r}")
        need(0.0 < self.beta <= 1.0, "beta", f"must lie in (0, 1], got {self.beta}")
        need(self.upper_barrier > self.lower_barrier, "upper_barrier",
             "must lie above lower_barrier")
        need(self.lower_barrier < self.s0 < self.upper_barrier, "s0",
             "spot must lie strictly between the barriers")
        need(self.h is None or self.h in H_KINDS, "h", f"expected one of {H_KINDS}, got {self.h!r}")
        if self.double:
            need(self.h_kind in ("quartic", "parabolic"), "h",
                 f"h={self.h_kind} only handles a single lower barrier")
        need(len(self.schemes) > 0, "scheme", "at least one scheme required")
        for s in self.schemes:
            need(s in SCHEMES, "scheme", f"expected one of {SCHEMES}, got {s!r}")
        need(len(set(self.schemes)) == len(self.schemes), "scheme", "duplicate scheme")
        need(len(self.n_steps) > 0 and all(n >= 1 for n in self.n_steps), "n_steps",
             "step counts must be positive integers")
        need(self.paths >= 2, "paths", "need at least 2 paths")
        need(0 <= self.seed < 2 ** 64, "seed", "must be a 64-bit unsigned integer")
        need(self.series_terms >= 1, "series_terms", "must be at least 1")
        need(self.workers >= 1, "workers", "must be at least 1")
        need(self.solver in ("newton", "bisection", "grid"), "solver",
             f"expected newton, bisection or grid, got {self.solver!r}")
        need(self.benchmark_n_steps >= 1, "benchmark_n_steps", "must be positive")
        need(self.benchmark_paths >= 2, "benchmark_paths", "need at least 2 paths")


# --- config file -----------------------------------------------------------

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_LIST_KEYS = {"scheme": "schemes", "schemes": "schemes", "n_steps": "n_steps"}


def _coerce(name: str, raw: str):
    raw = raw.strip()
    try:
        if name in ("schemes",):
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        if name == "n_steps":
            return tuple(int(s) for s in raw.split(",") if s.strip())
        if name in ("paths", "seed", "series_terms", "workers", "benchmark_n_steps",
                    "benchmark_paths"):
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if name in ("sigma", "nu", "beta", "strike", "lower_barrier", "upper_barrier",
                    "maturity", "s0"):
            return float(raw)
        if raw.lower() in ("", "none"):
            return None
        return raw
    except ValueError as exc:
        raise ConfigError(name, f"cannot parse {raw!r}: {exc}") from None


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines (``#`` comments) into config overrides."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string("[experiment]\n" + text)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc)) from None
    out = {}
    for key, raw in parser["experiment"].items():
        name = key.replace("-", "_")
        name = _LIST_KEYS.get(name, name)
        if name not in _FIELD_TYPES:
            raise ConfigError(key, "unknown config key")
        out[name] = _coerce(name, raw)
    return out


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    values = {}
    if path is not None:
        try:
            values.update(parse_config_text(Path(path).read_text()))
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from None
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from None


# --- setup -----------------------------------------------------------------

@dataclass
class Setup:
    """Everything needed to simulate one scheme at one step count."""

    kernel: object
    payoffs: list
    prefactor: float
    h: Optional[HTransform]


def _price_payoff(kind: str, strike: float, to_price: Callable) -> Callable:
    if kind == "put":
        return lambda x: np.maximum(strike - to_price(x), 0.0)
    return lambda x: np.maximum(to_price(x) - strike, 0.0)


def _coordinates(cfg: ExperimentConfig):
    """Model, start point and the map from state to price."""
    if cfg.model == "bs":
        model = bs_log_from_prices(cfg.sigma, cfg.lower_barrier, cfg.upper_barrier, drifted=True)
        return model, math.log(cfg.s0), np.exp, cfg.sigma
    model = hlv_model(cfg.nu, cfg.beta, cfg.lower_barrier, cfg.upper_barrier)
    return model, float(cfg.s0), (lambda x: x), cfg.nu


def build_setup(cfg: ExperimentConfig, scheme: str, N: int,
                strikes: Optional[Sequence[float]] = None) -> Setup:
    model, x0, to_price, s_scale = _coordinates(cfg)
    strikes = [cfg.strike] if strikes is None else list(strikes)
    payoffs = [_price_payoff(cfg.payoff, k, to_price) for k in strikes]
    grid = StepGrid(cfg.maturity, N)
    if scheme == "euler":
        return Setup(EulerKernel(model, grid, model.domain, x0), payoffs, 1.0, None)
    if scheme == "bridge":
        return Setup(BridgeKernel(model, grid, model.domain, x0, cfg.series_terms),
                     payoffs, 1.0, None)
    red = remove_drift(model, payoffs[0], x0, cfg.maturity)
    prefactor = red.prefactor(x0)
    residual = red.residual_b
    if red.residual_b_const is not None:
        # constant potential: fold exp(sigma^2 b T) into the prefactor
        prefactor *= math.exp(s_scale * s_scale * red.residual_b_const * cfg.maturity)
        residual = 0.0
    elif model.driftless:
        residual = 0.0
    transform = make_h(cfg.h_kind, model.domain, s_scale)
    kernel = BemKernel(red.driftless, transform, grid, x0, residual, cfg.solver)
    return Setup(kernel, [red.payoff_transform(p) for p in payoffs], prefactor, transform)


def simulate(cfg: ExperimentConfig, scheme: str, N: int, rng: Optional[RngSpec] = None,
             n_paths: Optional[int] = None,
             strikes: Optional[Sequence[float]] = None) -> list[McResult]:
    setup = build_setup(cfg, scheme, N, strikes)
    return run_mc_multi(setup.kernel, setup.payoffs, setup.prefactor, setup.h,
                        rng or RngSpec(cfg.seed), n_paths or cfg.paths, cfg.workers)


# --- benchmarks ------------------------------------------------------------

@dataclass(frozen=True)
class Benchmark:
    value: float
    stderr: float
    source: str


def analytic_benchmark(cfg: ExperimentConfig) -> Optional[Benchmark]:
    """Closed-form price, or ``None`` when no closed form covers the config."""
    if cfg.model != "bs":
        return None
    if cfg.payoff == "put" and not cfg.double:
        if cfg.strike <= cfg.lower_barrier:
            return Benchmark(0.0, 0.0, "analytic")
        spec = analytic.BarrierSpec(analytic.DOWN_OUT_PUT, cfg.strike, cfg.lower_barrier,
                                    T=cfg.maturity, sigma=cfg.sigma, s0=cfg.s0)
        return Benchmark(analytic.down_out_put_price(spec), 0.0, "analytic")
    if cfg.payoff == "call" and cfg.double:
        spec = analytic.BarrierSpec(analytic.DOUBLE_OUT_CALL, cfg.strike, cfg.lower_barrier,
                                    cfg.upper_barrier, cfg.maturity, cfg.sigma, cfg.s0)
        return Benchmark(analytic.double_out_call_price(spec, cfg.series_terms), 0.0, "analytic")
    return None


def _bench_identity(cfg: ExperimentConfig, scheme: str, strike: float) -> dict:
    ident = {
        "model": cfg.model, "payoff": cfg.payoff, "strike": strike,
        "lower_barrier": cfg.lower_barrier, "upper_barrier": cfg.upper_barrier,
        "maturity": cfg.maturity, "s0": cfg.s0, "scheme": scheme,
        "n_steps": cfg.benchmark_n_steps, "paths": cfg.benchmark_paths, "seed": cfg.seed,
    }
    if cfg.model == "bs":
        ident["sigma"] = cfg.sigma
    else:
        ident.update(nu=cfg.nu, beta=cfg.beta)
    if scheme == "bem":
        ident["h"] = cfg.h_kind
    if scheme == "bridge":
        ident["series_terms"] = cfg.series_terms
    return ident


def config_hash(ident: dict) -> str:
    blob = json.dumps({k: repr(v) for k, v in sorted(ident.items())}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:32]


def cache_path(cfg: ExperimentConfig) -> Path:
    if cfg.benchmark_cache:
        return Path(cfg.benchmark_cache)
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "killedsde" / "benchmarks.json"


class BenchmarkCache:
    """JSON file mapping config hashes to stored self-benchmark values."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._data = None

    @property
    def data(self) -> dict:
        if self._data is None:
            try:
                self._data = json.loads(self.path.read_text())
            except FileNotFoundError:
                self._data = {}
        return self._data

    def get(self, key: str) -> Optional[Benchmark]:
        entry = self.data.get(key)
        if entry is None:
            return None
        return Benchmark(float(entry["value"]), float(entry["stderr"]), "self")

    def put(self, key: str, ident: dict, result: McResult) -> None:
        self.data[key] = {"value": result.mean, "stderr": result.stderr,
                          "config": {k: repr(v) for k, v in ident.items()},
                          "wall_time": result.wall_time}
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.data, indent=1, sort_keys=True))
        tmp.replace(self.path)


def compute_self_benchmarks(cfg: ExperimentConfig, scheme: str = "bem",
                            strikes: Optional[Sequence[float]] = None,
                            force: bool = False) -> dict[float, Benchmark]:
    """Dense-grid values for each strike, simulated together on one path set."""
    strikes = [cfg.strike] if strikes is None else list(strikes)
    cache = BenchmarkCache(cache_path(cfg))
    out, todo = {}, []
    for k in strikes:
        ident = _bench_identity(cfg, scheme, k)
        hit = None if force else cache.get(config_hash(ident))
        if hit is None:
            todo.append((k, ident))
        else:
            out[k] = hit
    if todo:
        results = simulate(cfg, scheme, cfg.benchmark_n_steps,
                           RngSpec(cfg.seed).derive(BENCHMARK_SALT), cfg.benchmark_paths,
                           [k for k, _ in todo])
        for (k, ident), res in zip(todo, results):
            cache.put(config_hash(ident), ident, res)
            out[k] = Benchmark(res.mean, res.stderr, "self")
    return out


class BenchmarkUnavailable(KilledSDEError, LookupError):
    """No closed form applies and no self-benchmark is cached."""


def get_benchmark(cfg: ExperimentConfig, scheme: str, compute: bool = True) -> Benchmark:
    bench = analytic_benchmark(cfg)
    if bench is not None:
        return bench
    if compute:
        return compute_self_benchmarks(cfg, scheme)[cfg.strike]
    hit = BenchmarkCache(cache_path(cfg)).get(config_hash(_bench_identity(cfg, scheme, cfg.strike)))
    if hit is None:
        raise BenchmarkUnavailable(
            f"no cached self-benchmark for scheme {scheme}; run the benchmark-cache command")
    return hit


# --- pricing and sweeps ----------------------------------------------------

@dataclass(frozen=True)
class Row:
    scheme: str
    N: int
    estimate: float
    stderr: float
    benchmark: float
    abs_error: float


@dataclass(frozen=True)
class SlopeFit:
    value: float
    stderr: float
    n_used: int
    n_rows: int


@dataclass
class PriceResult:
    scheme: str
    N: int
    result: McResult
    benchmark: Optional[Benchmark]

    @property
    def abs_error(self) -> float:
        if self.benchmark is None:
            return math.nan
        return abs(self.result.mean - self.benchmark.value)

    def row(self) -> Row:
        b = math.nan if self.benchmark is None else self.benchmark.value
        return Row(self.scheme, self.N, self.result.mean, self.result.stderr, b, self.abs_error)


def run_price(cfg: ExperimentConfig, compute_benchmark: bool = True) -> list[PriceResult]:
    """Price at the first configured step count with every configured scheme.

    Without a closed form and with ``compute_benchmark`` false, the benchmark
    is looked up in the cache only and left as ``None`` if missing.
    """
    N = cfg.n_steps[0]
    out = []
    for scheme in cfg.schemes:
        try:
            bench = get_benchmark(cfg, scheme, compute_benchmark)
        except BenchmarkUnavailable:
            bench = None
        res = simulate(cfg, scheme, N)[0]
        out.append(PriceResult(scheme, N, res, bench))
    return out


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)
    benchmark_stderr: dict = field(default_factory=dict, compare=False)

    def rows_for(self, scheme: str) -> list[Row]:
        return [r for r in self.rows if r.scheme == scheme]

    def slope(self, scheme: str) -> float:
        return self.slopes[scheme].value


def least_squares_slope(log_n: Sequence[float], log_err: Sequence[float]) -> tuple[float, float]:
    """Slope of ``log_err ~ a - slope * log_n`` and its standard error."""
    A = np.column_stack([np.ones(len(log_n)), np.asarray(log_n, dtype=float)])
    y = np.asarray(log_err, dtype=float)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    dof = len(y) - 2
    if dof <= 0:
        return -float(coef[1]), math.nan
    resid = y - A @ coef
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    return -float(coef[1]), math.sqrt(cov[1, 1])


def fit_slope(rows: Sequence[Row], bench_stderr: float = 0.0) -> SlopeFit:
    """Fit over rows whose error is statistically resolvable.

    A row is used when its absolute error exceeds three combined standard
    errors (run and benchmark). Fewer than two usable rows gives ``nan``.
    """
    used = [r for r in rows
            if r.abs_error > RESOLVABLE * math.hypot(r.stderr, bench_stderr) and r.abs_error > 0]
    if len(used) < 2:
        return SlopeFit(math.nan, math.nan, len(used), len(rows))
    value, err = least_squares_slope([math.log(r.N) for r in used],
                                     [math.log(r.abs_error) for r in used])
    return SlopeFit(value, err, len(used), len(rows))


def check_n_list(n_steps: Sequence[int]) -> None:
    ns = sorted(set(n_steps))
    if len(ns) < 4 or ns[-1] < 4 * ns[0]:
        raise ConfigError("n_steps", "a sweep needs at least 4 step counts spanning 2 octaves")


def run_convergence(cfg: ExperimentConfig, compute_benchmark: bool = True,
                    progress: Optional[Callable[[Row], None]] = None) -> ConvergenceReport:
    check_n_list(cfg.n_steps)
    report = ConvergenceReport()
    for scheme in cfg.schemes:
        bench = get_benchmark(cfg, scheme, compute_benchmark)
        report.benchmark_stderr[scheme] = bench.stderr
        rows = []
        for N in cfg.n_steps:
            res = simulate(cfg, scheme, N)[0]
            row = Row(scheme, N, res.mean, res.stderr, bench.value, abs(res.mean - bench.value))
            rows.append(row)
            if progress is not None:
                progress(row)
        report.rows.extend(rows)
        report.slopes[scheme] = fit_slope(rows, bench.stderr)
    return report


# --- CSV ------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".16e")


def format_csv(report: ConvergenceReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in report.rows:
        w.writerow([r.scheme, r.N, _fmt(r.estimate), _fmt(r.stderr), _fmt(r.benchmark),
                    _fmt(r.abs_error)])
    for scheme, s in report.slopes.items():
        # padded to the header width with the fit's row counts
        w.writerow(["slope", scheme, _fmt(s.value), _fmt(s.stderr), s.n_used, s.n_rows])
    return buf.getvalue()


def emit_csv(report: ConvergenceReport, path) -> None:
    Path(path).write_text(format_csv(report))


def parse_csv(text: str) -> ConvergenceReport:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header!r}")
    report = ConvergenceReport()
    for rec in reader:
        if not rec:
            continue
        if rec[0] == "slope":
            report.slopes[rec[1]] = SlopeFit(float(rec[2]), float(rec[3]), int(rec[4]), int(rec[5]))
        else:
            report.rows.append(Row(rec[0], int(rec[1]), *(float(v) for v in rec[2:6])))
    return report


def read_csv(path) -> ConvergenceReport:
    return parse_csv(Path(path).read_text())


def plot_data(report: ConvergenceReport) -> str:
    """``scheme,log_N,log_abs_error`` lines for rows with a nonzero error."""
    lines = ["scheme,log_N,log_abs_error"]
    for r in report.rows:
        if r.abs_error > 0 and math.isfinite(r.abs_error):
            lines.append(f"{r.scheme},{_fmt(math.log(r.N))},{_fmt(math.log(r.abs_error))}")
    return "\n".join(lines) + "\n"


def config_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


__all__ = [
    "ExperimentConfig", "ConvergenceReport", "Row", "SlopeFit", "PriceResult", "Benchmark",
    "BenchmarkCache", "BenchmarkUnavailable", "build_setup", "simulate", "run_price",
    "run_convergence", "fit_slope", "least_squares_slope", "emit_csv", "read_csv",
    "format_csv", "parse_csv", "plot_data", "load_config", "parse_config_text",
    "compute_self_benchmarks", "analytic_benchmark", "get_benchmark", "config_hash",
]
