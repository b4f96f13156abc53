"""Acceptance checks, one test per criterion.

Each test stores a short measurement summary on the test node; the
conftest prints one PASS/FAIL line per criterion at the end of the run.
"""

import csv
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from distfair.audit import group_table, importance
from distfair.basis import one_hot
from distfair.datagen import CATEGORIES, TABLE_MU, TABLE_SIGMA2, DGPConfig, as_binary, generate
from distfair.datamodel import standardize
from distfair.decision import Decision, DecisionPolicy, coverage_gap, decide, default_delta_grid, sweep
from distfair.families import bernoulli_nll, gamma_cdf, gamma_nll
from distfair.model import ModelSpec, labels_for, predict_dataset, save, zero_model
from distfair.optimizer import FitConfig, fit
from oracles import central_diff, decide_reference, gamma_cdf_quad, newton_logistic

# full-batch epochs: enough to converge at these sizes
LONG_FIT = dict(max_epochs=5000, tol=1e-12)


def _note(request, text):
    request.node.criterion_detail = text


@pytest.mark.slow
@pytest.mark.criterion(1, "parameter recovery at n = 50 000, lambda = 1e-4")
def test_parameter_recovery(request):
    cfg = DGPConfig(n=50_000, seed=0)
    data, truth = generate(cfg)
    spec = ModelSpec.from_schema(data.schema, "gamma")
    t0 = time.perf_counter()
    model = fit(spec, data, FitConfig(lam=1e-4, **LONG_FIT))
    elapsed = time.perf_counter() - t0
    err_mu = np.abs(model.coef["mu"]["group"] - truth.group_mu)
    err_s2 = np.abs(model.coef["sigma2"]["group"] - truth.group_sigma2)
    noise = slice(cfg.n_informative, None)
    betas = np.concatenate([model.coef["mu"]["linear"][noise], model.coef["sigma2"]["linear"][noise]])
    zero_share = float(np.mean(betas == 0.0))
    _note(
        request,
        f"max|err| mu={err_mu.max():.3f} sigma2={err_s2.max():.3f}; "
        f"noise zeros={zero_share:.0%}; fit {elapsed:.0f}s",
    )
    assert model.meta["converged"]
    failures = []
    if err_mu.max() > 0.05:
        failures.append(f"mu group errors {np.round(err_mu, 3)} exceed 0.05")
    if err_s2.max() > 0.05:
        failures.append(f"sigma2 group errors {np.round(err_s2, 3)} exceed 0.05")
    if zero_share < 0.8:
        failures.append(f"only {zero_share:.0%} of noise coefficients are exactly zero")
    if elapsed >= 300:
        failures.append(f"fit took {elapsed:.0f}s")
    assert not failures, "; ".join(failures)


@pytest.mark.criterion(2, "lambda = 0 Bernoulli fit equals Newton-Raphson logistic")
def test_logistic_equivalence(request):
    cfg = DGPConfig(n=200, beta_mu=(0.6, -0.5), beta_sigma2=(0.4, -0.3), n_noise=0, time_scale=8.0, seed=4)
    data = as_binary(generate(cfg)[0])
    spec = ModelSpec("bernoulli", CATEGORIES, ("age", "f01", "f02"), None)
    m = fit(spec, data, FitConfig(lam=0.0, max_epochs=20000, tol=0.0))
    std, _ = standardize(data)
    x = np.hstack([one_hot(std.sensitive, CATEGORIES).matrix, std.features])
    ref = newton_logistic(x, std.outcome.astype(float))
    err = float(np.max(np.abs(m.coef_matrix()[:, 0] - ref)))
    _note(request, f"max abs coefficient error {err:.1e}")
    assert err < 1e-4


@pytest.mark.criterion(3, "gamma_cdf against quadrature and exponential closed form")
def test_special_function_fidelity(request):
    ks = np.linspace(0.1, 50.0, 40)
    xs = np.linspace(0.1, 50.0, 25)
    worst = 0.0
    for k in ks:
        # rate 1: y = x, mean = variance = k
        lib = gamma_cdf(xs, np.full_like(xs, k), np.full_like(xs, k))
        ref = np.array([gamma_cdf_quad(k, x) for x in xs])
        worst = max(worst, float(np.max(np.abs(lib - ref))))
    y = np.linspace(0.0, 40.0, 2001)
    exp_err = float(np.max(np.abs(gamma_cdf(y, 1.0, 1.0) - (1.0 - np.exp(-y)))))
    _note(request, f"{len(ks) * len(xs)} points, max quad error {worst:.1e}, exponential {exp_err:.1e}")
    assert worst < 1e-8
    assert exp_err < 1e-12


@pytest.mark.criterion(4, "analytic gradients against central differences")
def test_gradient_correctness(request):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        eta = rng.uniform(-1.5, 1.5, size=2)
        y = rng.uniform(0.05, 10.0)
        _, g = gamma_nll(y, eta[0], eta[1])
        fd = central_diff(lambda e: float(gamma_nll(y, e[0], e[1])[0]), eta)
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
        e = rng.uniform(-6.0, 6.0)
        yb = int(rng.integers(0, 2))
        _, gb = bernoulli_nll(yb, e)
        fdb = central_diff(lambda v: float(bernoulli_nll(yb, v[0])[0]), np.array([e]))[0]
        worst = max(worst, abs(float(gb) - fdb) / abs(fdb))
    _note(request, f"max relative error {worst:.1e}")
    assert worst < 1e-5


@pytest.mark.criterion(5, "monotone objective and byte-identical reruns")
def test_descent_and_determinism(request, tmp_path):
    data, _ = generate(DGPConfig(n=5000, seed=11))
    spec = ModelSpec.from_schema(data.schema, "gamma")
    cfg = FitConfig(lam=1e-3, max_epochs=400)
    a = fit(spec, data, cfg)
    b = fit(spec, data, cfg)
    h = np.asarray(a.meta["history"])
    rises = int(np.sum(np.diff(h) > 0))
    save(a, tmp_path / "a.json")
    save(b, tmp_path / "b.json")
    same = (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    _note(request, f"{len(h) - 1} epochs, {rises} increases, identical files={same}")
    assert rises == 0
    assert same


@pytest.mark.criterion(6, "reject rule equals the three-branch reference on the full grid")
def test_reject_option_semantics(request):
    ps = np.arange(1001) / 1000.0
    deltas = np.arange(11) / 20.0
    mismatches = 0
    for d in deltas:
        got = decide(ps, DecisionPolicy.symmetric(float(d)))
        ref = np.array([decide_reference(float(p), float(d)) for p in ps])
        mismatches += int(np.sum(got != ref))
    full = decide(ps, DecisionPolicy.symmetric(0.5))
    rejected_at_half = int(np.sum(full == Decision.REJECT))
    _note(request, f"{mismatches} mismatches over {ps.size * deltas.size} cases; {rejected_at_half} rejected at 0.5")
    assert mismatches == 0
    assert rejected_at_half == 0


@pytest.mark.criterion(7, "coverage monotone and accuracy floor with true probabilities")
def test_coverage_and_accuracy_floor(request):
    data, truth = generate(DGPConfig(n=50_000, seed=21))
    labels = labels_for(data)
    points = sweep(truth.prob, labels, np.zeros(len(data), dtype=object), default_delta_grid())
    cov = np.array([p.prop_classified for p in points])
    monotone = bool(np.all(np.diff(cov) >= 0))
    margins = []
    for p in points:
        if p.n_classified == 0:
            continue
        floor = 1.0 - p.delta
        se = math.sqrt(floor * (1.0 - floor) / p.n_classified)
        margins.append(p.accuracy - (floor - 3.0 * se))
    _note(request, f"{len(margins)} nonempty deltas, smallest margin {min(margins):.4f}")
    assert monotone
    assert min(margins) >= 0.0


@pytest.mark.criterion(8, "variance factors and importance ranking")
def test_audit_consistency(request):
    data, _ = generate(DGPConfig(n=50, seed=0))
    _, stats = standardize(data)
    spec = ModelSpec.from_schema(data.schema, "gamma")
    m = zero_model(spec, stats)
    m.coef["mu"]["group"][:] = np.log(TABLE_MU)
    m.coef["sigma2"]["group"][:] = np.log(TABLE_SIGMA2)
    rows = {r.cell: r.variance_factor for r in group_table(m)}
    rng = np.random.default_rng(8)
    planted = rng.normal(size=len(spec.linear_features))
    planted[[3, 9]] = planted[12]  # ties resolve in column order
    m.coef["mu"]["linear"][:] = planted
    ranked = importance(m, "mu", top_n=len(planted)).names
    direct = tuple(spec.linear_features[j] for j in sorted(range(len(planted)), key=lambda j: (-abs(planted[j]), j)))
    _note(request, f"factors {rows['male-NonGerman']:.3f} and {rows['male-German']:.3f}")
    assert abs(rows["male-NonGerman"] - 1.36) <= 0.005
    assert abs(rows["male-German"] - 1.00) <= 0.005
    assert ranked == direct


@pytest.mark.slow
@pytest.mark.criterion(9, "group accuracy gap shrinks from 100% to 60% coverage")
def test_group_accuracy_convergence(request):
    gaps = []
    for seed in (0, 1, 2):
        train, _ = generate(DGPConfig(n=50_000, seed=seed))
        test, _ = generate(DGPConfig(n=50_000, seed=1000 + seed))
        spec = ModelSpec.from_schema(train.schema, "gamma")
        m = fit(spec, train, FitConfig(lam=1e-4, **LONG_FIT))
        pred = predict_dataset(m, test.with_split("test"))
        points = sweep(pred.prob, labels_for(test), pred.cells, group_order=spec.cells)
        _, at60 = coverage_gap(points, spec.cells, 0.6)
        _, at100 = coverage_gap(points, spec.cells, 1.0)
        gaps.append((at60, at100))
    _note(request, "; ".join(f"seed {s}: {a:.3f} < {b:.3f}" for s, (a, b) in zip((0, 1, 2), gaps)))
    assert all(a < b for a, b in gaps)


E2E_CONFIG = """
seed = 5

[generate]
n = 20000

[fit]
lambda = 1e-4
max_epochs = 5000
tol = 1e-12
"""


@pytest.mark.slow
@pytest.mark.criterion(10, "generate, fit, sweep and audit through the CLI")
def test_end_to_end_cli(request, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(E2E_CONFIG)

    def run(*args):
        return subprocess.run([sys.executable, "-m", "distfair", *args, "--config", str(cfg)],
                              capture_output=True, text=True)

    t0 = time.perf_counter()
    steps = [
        ("generate", "--out", str(tmp_path / "train.csv")),
        ("generate", "--seed", "6", "--n", "10000", "--out", str(tmp_path / "test.csv")),
        ("fit", "--data", str(tmp_path / "train.csv"), "--out", str(tmp_path / "model.json")),
        ("sweep", "--model", str(tmp_path / "model.json"), "--data", str(tmp_path / "test.csv"),
         "--out", str(tmp_path / "curve.csv")),
        ("audit", "--model", str(tmp_path / "model.json"), "--data", str(tmp_path / "test.csv"),
         "--out", str(tmp_path / "audit")),
    ]
    codes = []
    for step in steps:
        res = run(*step)
        codes.append(res.returncode)
        assert res.returncode == 0, res.stderr
    elapsed = time.perf_counter() - t0

    def nrows(path):
        with open(path, newline="") as fh:
            return sum(1 for _ in csv.reader(fh)) - 1

    audit = tmp_path / "audit"
    expected = {
        tmp_path / "curve.csv": 101 * 5,
        audit / "curves_overall.csv": 101,
        audit / "curves_groups.csv": 101 * 5,
        audit / "reject_by_group.csv": 101 * 4,
        audit / "group_table.csv": 4,
        audit / "importance_mu.csv": 5,
        audit / "importance_sigma2.csv": 5,
    }
    counts = {p.name: nrows(p) for p in expected}
    _note(request, f"exit codes {codes}, {elapsed:.0f}s")
    assert (audit / "manifest.json").exists()
    assert counts == {p.name: n for p, n in expected.items()}
    assert elapsed < 600
