"""Invariant and property checks on small synthetic problems.

Used by ``plw check``; each check returns a :class:`CheckResult` instead of
raising so that one failure does not hide the others.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elliptic import build_problem
from .harness import build_synthetic
from .methods import (MethodSpec, StoppingRule, monotonicity_check, run_iteration,
                      separation_gap_exact, step_family)
from .operators import adjoint_dot_test, fd_adjoint_defect, make_diagonal_linear


@dataclass
class CheckResult:
    name: str
    ok: bool
    value: float
    limit: float

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name}: {self.value:.3e} (limit {self.limit:.0e})"


def _le(name, value, limit):
    return CheckResult(name, bool(value <= limit), float(value), limit)


def check_dot_tests():
    out = []
    for kind in ("diagonal", "quadratic"):
        pb = build_synthetic(kind, 20, seed=1)
        out.append(_le(f"{kind} dot test", adjoint_dot_test(pb.op, pb.x_star), 1e-14))
    pb = build_problem("calderon", 16, 32, amplitude=4.0, width=10.0)
    out.append(_le("elliptic dot test", adjoint_dot_test(pb.op, pb.a_star), 1e-8))
    out.append(_le("elliptic FD adjoint", fd_adjoint_defect(pb.op, pb.a_star), 1e-4))
    return out


def check_hand_step():
    op = make_diagonal_linear([1.0, 0.5])
    x1, rec = step_family(op, np.ones(2), np.zeros(2), MethodSpec("PLW", 0.0))
    lam = 1.25 / 1.0625
    err = max(abs(rec.lambda_k - lam),
              np.max(np.abs(x1 - (np.ones(2) - lam * np.array([1.0, 0.25])))))
    return [_le("hand-computed PLW step", err, 1e-12)]


def check_plw_me_identity(n_steps=50):
    pb = build_synthetic("diagonal", 20, seed=2)
    stop = StoppingRule("max-iterations", k_max=n_steps)
    runs = [run_iteration(pb.op, pb.x0, pb.y, MethodSpec(m, 0.0), stop, store_iterates=True)
            for m in ("PLW", "ME")]
    diff = max(np.max(np.abs(a.x - b.x)) for a, b in zip(*runs))
    return [_le("PLW = ME on a linear operator", diff, 1e-12)]


def check_monotonicity(n_runs=20):
    worst = 0.0
    for seed in range(n_runs):
        pb = build_synthetic("diagonal", 20, seed=seed)
        h = run_iteration(pb.op, pb.x0, pb.y, MethodSpec("PLW", 0.0),
                          StoppingRule.exact(1e-10, 100), store_iterates=True)
        scale = np.dot(pb.x_star - pb.x0, pb.x_star - pb.x0)
        for a, b in zip(h, h[1:]):
            worst = min(worst, monotonicity_check(pb.op, a, b, pb.x_star, 0.0) / scale)
    return [_le("monotonicity defect (negated, relative)", -worst, 1e-10)]


def check_separation(n_points=100):
    pb = build_synthetic("diagonal", 20, seed=3)
    rng = np.random.default_rng(3)
    gap = max(separation_gap_exact(pb.op, pb.x_star + rng.standard_normal(20), pb.x_star, 0.0)
              for _ in range(n_points))
    return [_le("separation gap at the solution", gap, 1e-12)]


def run_all() -> list[CheckResult]:
    out = []
    for fn in (check_dot_tests, check_hand_step, check_plw_me_identity, check_monotonicity,
               check_separation):
        out.extend(fn())
    return out
