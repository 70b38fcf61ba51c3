"""Experiment configuration, seeded noise and CSV output of method comparisons.

A config file is plain ``key = value`` text in any number of sections::

    [problem]
    problem = elliptic-calderon
    n = 32

    [method]
    methods = PLW, SD, LW
    eta = 0.45

    [noise]
    delta_rel = 0.02
    seed = 0

Section names are only for readability; keys must be unique across them.
"""
from __future__ import annotations

import configparser
import csv
import logging
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .elliptic import FLUX_RECOVERY, PHANTOMS, build_problem
from .errors import ConfigError, ContractViolation, DomainError, SolverError
from .methods import (DEFAULT_RELAXATION, History, MethodSpec, StoppingRule, run_iteration,
                      tau_lower_bound)
from .operators import ForwardOperator, make_diagonal_linear, make_quadratic_perturbation

log = logging.getLogger(__name__)

PROBLEMS = ("diagonal", "quadratic", "elliptic-calderon", "elliptic-semiconductor")
OUTPUT_ENV = "PLW_OUTPUT_DIR"
HISTORY_COLUMNS = ("k", "residual_norm", "error_norm", "lambda", "theta", "step_norm",
                   "halfspace_gap", "in_ball")
SUMMARY_COLUMNS = ("method", "stop_k", "final_residual", "final_error", "wall_time_s",
                   "theta_clip_count", "status")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one method comparison.

    ``n`` is the dimension of the synthetic problems and the number of grid
    cells per axis of the elliptic ones.  ``residual_rtol`` is the relative
    residual target of exact-data runs (``delta_rel = 0``).
    """

    problem: str = "diagonal"
    n: int = 50
    data_n: int = 64
    phantom: str = "smooth-bump"
    amplitude: float = 0.5
    width: float = 25.0
    flux: str = "one-sided"
    c: float = 0.1
    methods: tuple = ("PLW",)
    eta: float = 0.0
    tau: float = 3.0
    delta_rel: float = 0.0
    seed: int = 0
    k_max: int = 1000
    residual_rtol: float = 1e-8
    theta_fixed: float = 1.0
    relaxation: tuple = DEFAULT_RELAXATION
    output_dir: str = "results"

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {PROBLEMS}")
        if self.phantom not in PHANTOMS:
            raise ConfigError(f"unknown phantom {self.phantom!r}")
        if self.flux not in FLUX_RECOVERY:
            raise ConfigError(f"unknown flux recovery {self.flux!r}")
        if self.n < 1 or self.k_max < 1:
            raise ConfigError("n and k_max must be positive")
        if not self.methods:
            raise ConfigError("at least one method is required")
        if self.delta_rel < 0:
            raise ConfigError("delta_rel must be nonnegative")
        if self.delta_rel > 0 and not self.tau > tau_lower_bound(self.eta):
            raise ConfigError(f"tau = {self.tau:g} must exceed (1+eta)/(1-eta) = "
                              f"{tau_lower_bound(self.eta):g}")
        try:
            self.method_specs()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def method_specs(self) -> list[MethodSpec]:
        specs = []
        for m in self.methods:
            member, _, arg = m.partition(":")
            theta = float(arg) if arg else self.theta_fixed
            specs.append(MethodSpec(member, self.eta, theta, tuple(self.relaxation)))
        return specs

    def stopping_rule(self, delta: float, y_norm: float) -> StoppingRule:
        if delta > 0:
            return StoppingRule.discrepancy(self.tau, delta, self.k_max)
        return StoppingRule.exact(self.residual_rtol * y_norm, self.k_max)

    @property
    def out_path(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output_dir)


_CASTS: dict[str, Callable] = {
    "problem": str, "n": int, "data_n": int, "phantom": str, "amplitude": float,
    "width": float, "flux": str, "c": float, "eta": float, "tau": float,
    "delta_rel": float, "seed": int, "k_max": int, "residual_rtol": float,
    "theta_fixed": float, "output_dir": str,
    "methods": lambda s: tuple(t.strip() for t in s.split(",") if t.strip()),
    "relaxation": lambda s: tuple(float(t) for t in s.split(",")),
}
_ALIASES = {"dim": "n", "rng_seed": "seed", "dimension": "n"}


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        parser.read_string(text if text.lstrip().startswith("[") else "[experiment]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            key = _ALIASES.get(key, key)
            if key not in _CASTS:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            if key in values:
                raise ConfigError(f"key {key!r} given twice")
            try:
                values[key] = _CASTS[key](raw.strip())
            except ValueError:
                raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)


# -- noise --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NoisySample:
    y_delta: np.ndarray
    delta_abs: float


def inject_noise(y, delta_rel: float, seed=0,
                 norm: Optional[Callable] = None) -> NoisySample:
    """Add Gaussian noise rescaled to |y_delta - y| = delta_rel |y| exactly.

    ``norm`` is the data-space norm (Euclidean by default).  A zero draw is
    replaced by one from the next spawned substream.
    """
    if delta_rel < 0:
        raise ValueError("delta_rel must be nonnegative")
    y = np.asarray(y, dtype=float)
    norm = norm or (lambda v: float(np.linalg.norm(v)))
    if delta_rel == 0:
        return NoisySample(y.copy(), 0.0)
    target = delta_rel * norm(y)
    seq = np.random.SeedSequence(seed)
    for child in [seq, *seq.spawn(8)]:
        z = np.random.default_rng(child).standard_normal(y.shape)
        nz = norm(z)
        if nz > 0:
            z *= target / nz
            y_delta = y + z
            return NoisySample(y_delta, norm(y_delta - y))
    raise ContractViolation("noise draws kept vanishing")


# -- problems -----------------------------------------------------------------


@dataclass
class Problem:
    op: ForwardOperator
    y: np.ndarray
    x_star: np.ndarray
    x0: np.ndarray


def build_synthetic(kind: str, n: int, seed=0, c: float = 0.1) -> Problem:
    """Diagonal (sigma_i = i^-2) or quadratic test problem with a seeded truth.

    x0 = 0 and the working ball has radius 2 |x* - x0|, so that
    B_{rho/2}(x*) lies inside B_rho(x0).
    """
    rng = np.random.default_rng(seed)
    i = np.arange(1, n + 1, dtype=float)
    x0 = np.zeros(n)
    if kind == "diagonal":
        op = make_diagonal_linear(i ** -2.0)
        x_star = rng.standard_normal(n) / i
    elif kind == "quadratic":
        op = make_quadratic_perturbation(n, c)
        # |x*| = 0.1 keeps the ball well inside the domain box for |c| <= 1
        x_star = rng.standard_normal(n)
        x_star *= 0.1 / np.linalg.norm(x_star)
    else:
        raise ValueError(f"unknown synthetic problem {kind!r}")
    radius = 2.0 * np.linalg.norm(x_star - x0)
    op.set_ball(x0, radius)
    if kind == "quadratic":
        op.C = op.derivative_bound(x0, radius)
    return Problem(op, op.apply(x_star), x_star, x0)


def build_from_config(cfg: ExperimentConfig) -> Problem:
    if cfg.problem in ("diagonal", "quadratic"):
        return build_synthetic(cfg.problem, cfg.n, cfg.seed, cfg.c)
    kind = cfg.problem.split("-", 1)[1]
    pb = build_problem(kind, cfg.n, cfg.data_n, cfg.phantom, amplitude=cfg.amplitude,
                       width=cfg.width, flux=cfg.flux)
    return Problem(pb.op, pb.y, pb.a_star, pb.a0)


# -- experiments --------------------------------------------------------------


@dataclass
class MethodResult:
    name: str
    history: History
    wall_time: float

    @property
    def summary(self) -> dict:
        h = self.history
        last = h[-1] if h else None
        return {
            "method": self.name,
            "stop_k": h.stop_k,
            "final_residual": last.residual_norm if last else None,
            "final_error": last.error_norm if last else None,
            "wall_time_s": self.wall_time,
            "theta_clip_count": h.theta_clip_count,
            "status": h.status,
        }


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    problem: Problem
    noise: NoisySample
    results: list = field(default_factory=list)
    paths: list = field(default_factory=list)

    def by_method(self) -> dict:
        return {r.name: r for r in self.results}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def history_rows(history: History):
    for r in history:
        yield (r.k, r.residual_norm, r.error_norm, r.lambda_k, r.theta_k, r.step_norm,
               r.halfspace_gap, r.in_ball)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def method_filename(name: str) -> str:
    return name.replace("theta=", "fixed-") + ".csv"


def _run_one(problem: Problem, spec: MethodSpec, stop: StoppingRule, y_delta) -> MethodResult:
    t0 = time.perf_counter()
    try:
        hist = run_iteration(problem.op, problem.x0, y_delta, spec, stop, x_star=problem.x_star)
    except (ContractViolation, DomainError, SolverError, ValueError) as exc:
        log.error("%s aborted: %s", spec.name, exc)
        hist = History(status="aborted", message=str(exc))
    return MethodResult(spec.name, hist, time.perf_counter() - t0)


def run_experiment(cfg: ExperimentConfig, write: bool = True,
                   problem: Optional[Problem] = None, out_dir=None) -> ExperimentResult:
    """Run every configured method on the same problem and noisy data.

    Writes ``<method>.csv`` histories and ``summary.csv`` to the output
    directory (``out_dir``, else ``$PLW_OUTPUT_DIR``, else the config).  A method that
    aborts is reported in the summary; the others still run.
    """
    problem = problem or build_from_config(cfg)
    op = problem.op
    noise = inject_noise(problem.y, cfg.delta_rel, cfg.seed, op.norm_y)
    stop = cfg.stopping_rule(noise.delta_abs, op.norm_y(problem.y))
    out = ExperimentResult(cfg, problem, noise)
    for spec in cfg.method_specs():
        res = _run_one(problem, spec, stop, noise.y_delta)
        out.results.append(res)
        log.info("%s: stop_k=%d status=%s", res.name, res.history.stop_k, res.history.status)
    if write:
        d = Path(out_dir) if out_dir is not None else cfg.out_path
        d.mkdir(parents=True, exist_ok=True)
        for res in out.results:
            p = d / method_filename(res.name)
            write_csv(p, HISTORY_COLUMNS, history_rows(res.history))
            out.paths.append(p)
        p = d / "summary.csv"
        write_csv(p, SUMMARY_COLUMNS,
                  ([r.summary[c] for c in SUMMARY_COLUMNS] for r in out.results))
        out.paths.append(p)
    return out


SWEEP_COLUMNS = ("delta_rel", "seed", "method", "stop_k", "final_residual", "final_error",
                 "status")


@dataclass
class SweepResult:
    rows: list
    inversions: list
    ok: bool


def semi_convergence_trend(errors_by_seed: dict, tolerance: float = 0.05,
                           max_inversions: int = 1) -> tuple[list, bool]:
    """Check that the final error does not increase as delta shrinks.

    ``errors_by_seed`` maps a seed to errors ordered by decreasing delta.
    Returns the inversions ``(seed, index, relative increase)`` and whether
    the trend holds: at most ``max_inversions`` inversions, each at most
    ``tolerance`` relative.
    """
    inv = []
    for seed, errs in errors_by_seed.items():
        for i in range(1, len(errs)):
            if errs[i] > errs[i - 1]:
                inv.append((seed, i, errs[i] / errs[i - 1] - 1.0))
    ok = len(inv) <= max_inversions and all(r <= tolerance for _, _, r in inv)
    return inv, ok


def noise_sweep(cfg: ExperimentConfig, deltas, seeds=None, method: str = "PLW",
                write: bool = True) -> SweepResult:
    """Repeat the experiment for each noise level (and seed).

    Per-run CSVs go to ``<out>/delta_<d>[_seed_<s>]/``; the collected rows
    to ``<out>/sweep.csv``.  The trend is checked on ``method``.
    """
    seeds = [cfg.seed] if seeds is None else list(seeds)
    if any(d <= 0 for d in deltas):
        raise ConfigError("noise sweep needs positive noise levels")
    problem = build_from_config(cfg)
    base = cfg.out_path
    rows, errs = [], {s: [] for s in seeds}
    for seed in seeds:
        for d in deltas:
            sub = f"delta_{d:g}" + (f"_seed_{seed}" if len(seeds) > 1 else "")
            run_cfg = replace(cfg, delta_rel=d, seed=seed)
            res = run_experiment(run_cfg, write=write, problem=problem, out_dir=base / sub)
            for r in res.results:
                s = r.summary
                rows.append((d, seed, r.name, s["stop_k"], s["final_residual"],
                             s["final_error"], s["status"]))
                if r.name == method:
                    errs[seed].append(s["final_error"])
    inv, ok = semi_convergence_trend(errs) if all(
        e and None not in e for e in errs.values()) else ([], False)
    if write:
        base.mkdir(parents=True, exist_ok=True)
        write_csv(base / "sweep.csv", SWEEP_COLUMNS, rows)
    return SweepResult(rows, inv, ok)
