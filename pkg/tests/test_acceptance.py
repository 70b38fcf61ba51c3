"""Acceptance criteria, one test and one PASS/FAIL line per criterion.

Run ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""
import csv
import io
import time
from functools import lru_cache

import numpy as np
import pytest

from plw.cli import main as cli_main
from plw.elliptic import build_problem
from plw.harness import Problem, build_synthetic, inject_noise, semi_convergence_trend
from plw.methods import (MethodSpec, StoppingRule, finiteness_bound, monotonicity_check,
                         run_iteration, separation_gap_exact, separation_gap_noisy,
                         summability_sum)
from plw.operators import estimate_tcc_eta, fd_adjoint_defect, sample_ball

N_SYNTH = 20
SEEDS = range(100)
ETA_EL, TAU_EL, DELTA_EL = 0.45, 3.0, 0.02
# phantom contrast for the elliptic runs: the default amplitude 0.5 leaves the
# initial residual below tau * delta, so every method would stop at k = 0
PHANTOM = dict(phantom="smooth-bump", amplitude=4.0, width=10.0)


def report(num, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}"
    print(line)
    return line


@pytest.fixture
def emit(capsys):
    def _emit(num, ok, detail):
        with capsys.disabled():
            print()
            report(num, ok, detail)
    return _emit


@lru_cache(maxsize=None)
def quadratic(seed):
    pb = build_synthetic("quadratic", N_SYNTH, seed)
    eta = estimate_tcc_eta(pb.op, pb.x0, pb.op.radius, 200, seed).eta_hat
    return pb, eta


@lru_cache(maxsize=None)
def calderon(n=32, data_n=64, **phantom):
    pb = build_problem("calderon", n, data_n, **(phantom or PHANTOM))
    return Problem(pb.op, pb.y, pb.a_star, pb.a0)


def _noisy(pb, rel, seed):
    s = inject_noise(pb.y, rel, seed, pb.op.norm_y)
    return s.y_delta, s.delta_abs


# -- criteria -----------------------------------------------------------------


def criterion_1():
    t0 = time.perf_counter()
    worst = np.inf
    pairs = 0
    for seed in SEEDS:
        for kind in ("diagonal", "quadratic"):
            if kind == "diagonal":
                pb, eta = build_synthetic(kind, N_SYNTH, seed), 0.0
            else:
                pb, eta = quadratic(seed)
            scale = pb.op.norm_x(pb.x_star - pb.x0) ** 2
            h = run_iteration(pb.op, pb.x0, pb.y, MethodSpec("PLW", eta),
                              StoppingRule("max-iterations", k_max=50), x_star=pb.x_star,
                              store_iterates=True)
            for a, b in zip(h, h[1:]):
                worst = min(worst, monotonicity_check(pb.op, a, b, pb.x_star, eta) / scale)
                pairs += 1
    dt = time.perf_counter() - t0
    ok = worst >= -1e-10 and dt < 10
    return ok, f"min relative defect {worst:.2e} over {pairs} pairs (>= -1e-10), {dt:.1f}s (< 10s)"


def criterion_2():
    t0 = time.perf_counter()
    worst = -np.inf
    for kind in ("diagonal", "quadratic"):
        if kind == "diagonal":
            pb, eta = build_synthetic(kind, N_SYNTH, 0), 0.0
        else:
            pb, eta = quadratic(0)
        y_delta, delta = _noisy(pb, 0.02, 0)
        rng = np.random.default_rng(1)
        for _ in range(100):
            x = sample_ball(pb.op, pb.x0, pb.op.radius, rng)
            worst = max(worst, separation_gap_exact(pb.op, x, pb.x_star, eta),
                        separation_gap_noisy(pb.op, x, pb.x_star, eta, y_delta, delta))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and dt < 5
    return ok, f"max gap {worst:.2e} (<= 1e-12), {dt:.2f}s (< 5s)"


def criterion_3():
    pb = build_synthetic("diagonal", N_SYNTH, 0)
    stop = StoppingRule("max-iterations", k_max=50)
    a = run_iteration(pb.op, pb.x0, pb.y, MethodSpec("PLW", 0.0), stop, store_iterates=True)
    b = run_iteration(pb.op, pb.x0, pb.y, MethodSpec("ME", 0.0), stop, store_iterates=True)
    diff = max(np.max(np.abs(r.x - s.x)) for r, s in zip(a, b))
    ok = diff <= 1e-12 and len(a.steps()) == 50
    return ok, f"max step difference {diff:.2e} over {len(a.steps())} steps (<= 1e-12)"


def criterion_4():
    worst_lw = worst_sd = 0.0
    steps = 0
    for rel in (0.0, 0.01):
        pb = build_synthetic("diagonal", N_SYNTH, 0)
        y_delta, delta = _noisy(pb, rel, 0)
        stop = (StoppingRule.discrepancy(3.0, delta, 200) if delta
                else StoppingRule("max-iterations", k_max=100))
        lw = run_iteration(pb.op, pb.x0, y_delta, MethodSpec("LW", 0.2), stop)
        for r in lw.steps():
            worst_lw = max(worst_lw, abs(r.theta_k * r.lambda_k - 1.0))
        steps += len(lw.steps())
        if delta:
            # the noisy SD rule scales by p_d / ((1 - eta) r^2); the identity is exact-data only
            continue
        sd = run_iteration(pb.op, pb.x0, y_delta, MethodSpec("SD", 0.2), stop,
                           store_iterates=True)
        for r in sd.steps():
            res = pb.op(r.x) - y_delta
            g = pb.op.adjoint_apply(r.x, res)
            s = pb.op.deriv_apply(r.x, g)
            target = (g @ g) / (s @ s)
            worst_sd = max(worst_sd, abs(r.theta_k * r.lambda_k / target - 1.0))
        steps += len(sd.steps())
    ok = worst_lw <= 1e-12 and worst_sd <= 1e-12
    return ok, (f"LW |theta*lambda - 1| {worst_lw:.1e}, SD relative error {worst_sd:.1e} "
                f"over {steps} steps (<= 1e-12)")


def _bound_for(pb, h, C, eta, tau, delta):
    thetas = [r.theta_k for r in h.steps() if r.step_norm]
    a, b = (min(thetas), max(thetas)) if thetas else (1.0, 1.0)
    return finiteness_bound(C, pb.op.norm_x(pb.x0 - pb.x_star), a, b, tau, eta, delta)


def criterion_5():
    runs = fails = 0
    tight = np.inf
    for seed in range(20):
        for kind in ("diagonal", "quadratic"):
            if kind == "diagonal":
                pb, eta, methods = build_synthetic(kind, N_SYNTH, seed), 0.2, ("PLW", "SD", "LW", "ME")
            else:
                (pb, eta), methods = quadratic(seed), ("PLW", "SD")
            tau = 2.0 if kind == "quadratic" else 3.0
            y_delta, delta = _noisy(pb, 0.02, seed)
            for m in methods:
                h = run_iteration(pb.op, pb.x0, y_delta, MethodSpec(m, eta),
                                  StoppingRule.discrepancy(tau, delta, 100000))
                bound = _bound_for(pb, h, pb.op.C, eta, tau, delta)
                runs += 1
                fails += not (h.status == "discrepancy" and h.stop_k + 1 <= bound)
                tight = min(tight, bound / (h.stop_k + 1))
    # elliptic runs: C is the largest |F'^* F_d| / |F_d| seen along the run
    pb = calderon()
    for seed in range(5):
        y_delta, delta = _noisy(pb, DELTA_EL, seed)
        for m in ("PLW", "SD", "LW"):
            h = run_iteration(pb.op, pb.x0, y_delta, MethodSpec(m, ETA_EL),
                              StoppingRule.discrepancy(TAU_EL, delta, 5000))
            c_eff = max(r.grad_norm / r.residual_norm for r in h.steps())
            bound = _bound_for(pb, h, c_eff, ETA_EL, TAU_EL, delta)
            runs += 1
            fails += not (h.status == "discrepancy" and h.stop_k + 1 <= bound)
            tight = min(tight, bound / (h.stop_k + 1))
    return fails == 0, f"{runs - fails}/{runs} noisy runs within the bound (min bound/(k+1) = {tight:.2f})"


def criterion_6():
    worst = 0.0
    runs = 0
    for seed in range(10):
        for kind in ("diagonal", "quadratic"):
            if kind == "diagonal":
                pb, eta = build_synthetic(kind, N_SYNTH, seed), 0.0
            else:
                pb, eta = quadratic(seed)
            for spec in (MethodSpec("PLW", eta), MethodSpec("SD", min(eta, 0.49)),
                         MethodSpec("fixed", eta, 1.5)):
                h = run_iteration(pb.op, pb.x0, pb.y, spec,
                                  StoppingRule("max-iterations", k_max=500))
                ratio = summability_sum(h, eta) / pb.op.norm_x(pb.x_star - pb.x0) ** 2
                worst = max(worst, ratio)
                runs += 1
    return worst <= 1 + 1e-10, f"max sum / |x*-x0|^2 = {worst:.6f} over {runs} runs (<= 1 + 1e-10)"


def criterion_7():
    t0 = time.perf_counter()
    worst = 0.0
    for kind in ("calderon", "semiconductor"):
        pb = build_problem(kind, 16, 32, **PHANTOM)
        worst = max(worst, fd_adjoint_defect(pb.op, pb.a_star, n_trials=10, h=1e-5, seed=0),
                    fd_adjoint_defect(pb.op, pb.a0, n_trials=10, h=1e-5, seed=1))
    dt = time.perf_counter() - t0
    return worst <= 1e-4 and dt < 30, f"FD-vs-adjoint defect {worst:.2e} (<= 1e-4), {dt:.1f}s (< 30s)"


def _stop_counts(pb, seeds=range(5)):
    out = {m: [] for m in ("PLW", "SD", "LW")}
    for seed in seeds:
        y_delta, delta = _noisy(pb, DELTA_EL, seed)
        for m in out:
            h = run_iteration(pb.op, pb.x0, y_delta, MethodSpec(m, ETA_EL),
                              StoppingRule.discrepancy(TAU_EL, delta, 5000))
            out[m].append(h.stop_k)
    return {m: float(np.mean(v)) for m, v in out.items()}


def criterion_8():
    t0 = time.perf_counter()
    k = _stop_counts(calderon())
    k_default = _stop_counts(calderon(phantom="smooth-bump"))
    dt = time.perf_counter() - t0
    ok = k["PLW"] < k["SD"] < k["LW"] and k["PLW"] <= 0.5 * k["SD"] and dt < 600
    return ok, (f"mean stop_k PLW {k['PLW']:.1f}, SD {k['SD']:.1f}, LW {k['LW']:.1f} "
                f"(need PLW < SD < LW and PLW <= SD/2); default-contrast phantom: "
                f"PLW {k_default['PLW']:.1f}, SD {k_default['SD']:.1f}, LW {k_default['LW']:.1f}; "
                f"{dt:.1f}s")


def criterion_9():
    pb = calderon()
    errs = {}
    for seed in range(5):
        errs[seed] = []
        for rel in (0.04, 0.02, 0.01):
            y_delta, delta = _noisy(pb, rel, seed)
            h = run_iteration(pb.op, pb.x0, y_delta, MethodSpec("PLW", ETA_EL),
                              StoppingRule.discrepancy(TAU_EL, delta, 5000), x_star=pb.x_star)
            errs[seed].append(h[-1].error_norm)
    inv, ok = semi_convergence_trend(errs)
    means = np.mean(list(errs.values()), axis=0)
    detail = ", ".join(f"seed {s} step {i} +{100 * r:.2f}%" for s, i, r in inv) or "none"
    return ok, (f"mean final H1 error {means[0]:.4f} -> {means[1]:.4f} -> {means[2]:.4f}; "
                f"inversions: {detail}")


CONFIG = """
[problem]
problem = elliptic-calderon
n = 32
data_n = 64
phantom = smooth-bump
amplitude = 4.0
width = 10.0
[method]
methods = PLW, SD, LW
eta = 0.45
tau = 3.0
[noise]
delta_rel = 0.02
seed = 0
"""


def _mask_timing(text):
    rows = list(csv.reader(io.StringIO(text)))
    col = rows[0].index("wall_time_s")
    return [r[:col] + r[col + 1:] for r in rows]


def criterion_10(tmp):
    cfg = tmp / "exp.ini"
    cfg.write_text(CONFIG)
    for d in ("a", "b"):
        assert cli_main(["run", str(cfg), "--output-dir", str(tmp / d)]) == 0
    files = sorted(p.name for p in (tmp / "a").iterdir())
    same = [(tmp / "a" / f).read_bytes() == (tmp / "b" / f).read_bytes()
            for f in files if f != "summary.csv"]
    summary = [(tmp / d / "summary.csv").read_text() for d in ("a", "b")]
    summary_same = _mask_timing(summary[0]) == _mask_timing(summary[1])
    ok = all(same) and summary_same
    return ok, (f"{sum(same)}/{len(same)} history CSVs byte-identical; summary.csv identical "
                f"apart from wall_time_s: {summary_same}")


# -- pytest entry points --------------------------------------------------------


@pytest.mark.parametrize("num", range(1, 10))
def test_criterion(num, emit):
    ok, detail = globals()[f"criterion_{num}"]()
    emit(num, ok, detail)
    assert ok, detail


def test_criterion_10(tmp_path, emit):
    ok, detail = criterion_10(tmp_path)
    emit(10, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    for num in range(1, 10):
        report(num, *globals()[f"criterion_{num}"]())
    with tempfile.TemporaryDirectory() as d:
        report(10, *criterion_10(Path(d)))
