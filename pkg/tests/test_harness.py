import csv

import numpy as np
import pytest

from plw.errors import ConfigError
from plw.harness import (HISTORY_COLUMNS, OUTPUT_ENV, SUMMARY_COLUMNS, ExperimentConfig,
                         build_synthetic, inject_noise, noise_sweep, parse_config, run_experiment,
                         semi_convergence_trend)


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_noise_examples():
    y = np.random.default_rng(0).standard_normal(40)
    s0 = inject_noise(y, 0.0, seed=3)
    assert s0.delta_abs == 0.0 and np.array_equal(s0.y_delta, y)
    s = inject_noise(y, 0.02, seed=3)
    assert abs(np.linalg.norm(s.y_delta - y) / np.linalg.norm(y) - 0.02) <= 1e-14
    assert s.delta_abs == pytest.approx(np.linalg.norm(s.y_delta - y), rel=1e-15)
    again = inject_noise(y, 0.02, seed=3)
    assert again.y_delta.tobytes() == s.y_delta.tobytes()
    assert not np.array_equal(inject_noise(y, 0.02, seed=4).y_delta, s.y_delta)
    with pytest.raises(ValueError):
        inject_noise(y, -0.1)


def test_noise_weighted_norm():
    y = np.ones(10)
    w = np.linspace(0.1, 1.0, 10)
    norm = lambda v: float(np.sqrt(np.dot(v, w * v)))
    s = inject_noise(y, 0.05, seed=1, norm=norm)
    assert norm(s.y_delta - y) / norm(y) == pytest.approx(0.05, rel=1e-14)


def test_parse_config_sections_and_aliases():
    cfg = parse_config("""
[problem]
problem = quadratic
dim = 12
c = 0.2
[method]
methods = PLW, fixed:1.5
eta = 0.1
[noise]
delta_rel = 0.01
rng_seed = 7
""")
    assert cfg.problem == "quadratic" and cfg.n == 12 and cfg.seed == 7
    assert [s.name for s in cfg.method_specs()] == ["PLW", "theta=1.5"]
    flat = parse_config("problem = diagonal\nn = 5\n")
    assert flat.n == 5


@pytest.mark.parametrize("text", [
    "problem = nope",
    "problem = diagonal\nfoo = 1",
    "n = five",
    "eta = 0.45\ntau = 1.0\ndelta_rel = 0.02",
    "delta_rel = -0.1",
    "methods = ",
    "methods = SD\neta = 0.6",
    "[a]\nn = 3\n[b]\nn = 4",
    "[broken",
])
def test_parse_config_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_tau_only_checked_for_noisy_runs():
    ExperimentConfig(eta=0.45, tau=1.0, delta_rel=0.0)


def test_synthetic_problems_start_inside_ball():
    for kind in ("diagonal", "quadratic"):
        pb = build_synthetic(kind, 10, seed=1)
        assert np.linalg.norm(pb.x_star - pb.x0) == pytest.approx(pb.op.radius / 2)
        assert np.allclose(pb.op(pb.x_star), pb.y)
    with pytest.raises(ValueError):
        build_synthetic("cubic", 3)


def test_run_writes_csvs(tmp_path):
    cfg = ExperimentConfig(problem="diagonal", n=20, methods=("PLW", "ME", "SD", "LW"),
                           k_max=200, output_dir=str(tmp_path))
    res = run_experiment(cfg)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["LW.csv", "ME.csv", "PLW.csv", "SD.csv", "summary.csv"]
    with open(tmp_path / "PLW.csv") as fh:
        assert fh.readline().strip().split(",") == list(HISTORY_COLUMNS)
    assert (tmp_path / "PLW.csv").read_bytes().endswith(b"\n")
    summary = _read(tmp_path / "summary.csv")
    assert list(summary[0]) == list(SUMMARY_COLUMNS)
    # exact-data diagonal problem: PLW and ME coincide
    assert (tmp_path / "PLW.csv").read_bytes() == (tmp_path / "ME.csv").read_bytes()
    for row, r in zip(summary, res.results):
        assert int(row["stop_k"]) == len(_read(tmp_path / f"{r.name}.csv")) - 1
        assert float(row["wall_time_s"]) >= 0.0


def test_discrepancy_runs_and_clip_counts(tmp_path):
    cfg = ExperimentConfig(problem="diagonal", n=30, methods=("PLW", "ME", "SD"), eta=0.2,
                           tau=2.5, delta_rel=0.01, seed=3, k_max=5000,
                           output_dir=str(tmp_path))
    res = run_experiment(cfg)
    tau_delta = cfg.tau * res.noise.delta_abs
    for r in res.results:
        h = r.history
        assert h.status == "discrepancy"
        assert h[-1].residual_norm <= tau_delta
        assert all(rec.residual_norm > tau_delta for rec in h[:-1])
        assert r.summary["stop_k"] == len(h) - 1
        if r.name in ("PLW", "ME"):
            assert h.theta_clip_count == 0


def test_abort_is_recorded_not_fatal(tmp_path):
    # the quadratic problem declares C > 1, which Landweber refuses
    cfg = ExperimentConfig(problem="quadratic", n=10, methods=("LW", "PLW"), eta=0.1,
                           k_max=50, output_dir=str(tmp_path))
    res = run_experiment(cfg)
    by = res.by_method()
    assert by["LW"].history.status == "aborted"
    assert by["PLW"].history.status in ("converged", "max-iterations")
    rows = {r["method"]: r for r in _read(tmp_path / "summary.csv")}
    assert rows["LW"]["status"] == "aborted" and rows["LW"]["final_residual"] == ""


def test_output_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    cfg = ExperimentConfig(problem="diagonal", n=5, k_max=5, output_dir=str(tmp_path / "cfg"))
    run_experiment(cfg)
    assert (tmp_path / "env" / "summary.csv").exists()
    assert not (tmp_path / "cfg").exists()


def test_histories_are_deterministic(tmp_path):
    base = dict(problem="quadratic", n=15, methods=("PLW", "SD"), eta=0.1, tau=3.0,
                delta_rel=0.02, seed=11, k_max=500)
    run_experiment(ExperimentConfig(**base, output_dir=str(tmp_path / "a")))
    run_experiment(ExperimentConfig(**base, output_dir=str(tmp_path / "b")))
    for name in ("PLW.csv", "SD.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_semi_convergence_trend_rule():
    assert semi_convergence_trend({0: [3.0, 2.0, 1.0]}) == ([], True)
    inv, ok = semi_convergence_trend({0: [3.0, 2.0, 2.2], 1: [3.0, 2.0, 1.0]})
    assert len(inv) == 1 and not ok
    inv, ok = semi_convergence_trend({0: [3.0, 2.0, 2.04], 1: [3.0, 2.0, 1.0]})
    assert ok
    _, ok = semi_convergence_trend({0: [3.0, 3.01, 3.02]})
    assert not ok


def test_noise_sweep_layout(tmp_path):
    cfg = ExperimentConfig(problem="diagonal", n=20, methods=("PLW",), tau=2.0, k_max=5000,
                           output_dir=str(tmp_path))
    res = noise_sweep(cfg, [0.04, 0.02, 0.01])
    assert (tmp_path / "sweep.csv").exists()
    assert (tmp_path / "delta_0.02" / "PLW.csv").exists()
    assert [r[0] for r in res.rows] == [0.04, 0.02, 0.01]
    errs = [r[5] for r in res.rows]
    assert errs[0] >= errs[1] >= errs[2] and res.ok
    with pytest.raises(ConfigError):
        noise_sweep(cfg, [0.0])
