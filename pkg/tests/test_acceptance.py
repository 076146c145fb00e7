"""Acceptance suite: one test per criterion, run at the required tolerances.

A one-line verdict per criterion is printed in the terminal summary.
"""

import math
import time

import numpy as np
import scipy.linalg as spla

from lpv_paclab.cli import main
from lpv_paclab.experiment import ExperimentConfig, run_experiment, validate_pac_montecarlo
from lpv_paclab.ident import identify, predict_recursion
from lpv_paclab.lpv_core import THETA_STAR, LpvSystem, simulate, simulate_batch, theta_system
from lpv_paclab.pac import PacConfig, corollary_excess_risk, theorem1_bound
from lpv_paclab.signals import PiecewiseConstantSignal, generate_dataset, paper_law
from lpv_paclab.stability_h2 import (
    NotCertifiable,
    SufficientConditionInput,
    h2_norm_sq,
    lyapunov_residual,
    solve_gen_lyapunov,
    sufficient_bound,
)
from lpv_paclab.volterra import picard_output, truncated_output_terms

# High-precision references (50-digit mpmath evaluation of the closed forms).
R_DELTA_C2 = 27.683314996812774021718700093354904739681025811239
R2_DELTA_C2 = 35.859610214922049236414016683252608621376154038016


def _random_stable(rng, n_x, n_p, n_in=1, n_out=1):
    while True:
        A0 = rng.normal(size=(n_x, n_x))
        A0 -= (np.max(np.linalg.eigvals(A0).real) + rng.uniform(0.5, 2.0)) * np.eye(n_x)
        A = [A0] + [0.3 * rng.normal(size=(n_x, n_x)) for _ in range(n_p)]
        B = [rng.normal(size=(n_x, n_in)) for _ in range(n_p + 1)]
        C = [rng.normal(size=(n_out, n_x)) for _ in range(n_p + 1)]
        sys = LpvSystem(tuple(A), tuple(B), tuple(C))
        try:
            solve_gen_lyapunov(sys, 0.0)
        except NotCertifiable:
            continue
        return sys


def test_criterion_1_lti_h2(record_property):
    t0 = time.perf_counter()
    scalar = LpvSystem.lti([[-1.0]], [[1.0]], [[1.0]])
    assert abs(h2_norm_sq(scalar, 0.0) - 0.5) <= 1e-10
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 7))
        A = rng.normal(size=(n, n))
        A -= (np.max(np.linalg.eigvals(A).real) + 0.5) * np.eye(n)
        B = rng.normal(size=(n, 2))
        C = rng.normal(size=(3, n))
        Wo = spla.solve_continuous_lyapunov(A.T, -C.T @ C)
        ref = np.trace(B.T @ Wo @ B)
        got = h2_norm_sq(LpvSystem.lti(A, B, C), 0.0)
        worst = max(worst, abs(got - ref) / abs(ref))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max rel err vs Gramian {worst:.2e}, {elapsed:.2f}s")
    assert worst <= 1e-10
    assert elapsed < 1.0


def test_criterion_2_lyapunov_residual(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(22)
    worst = 0.0
    for _ in range(100):
        sys = _random_stable(rng, int(rng.integers(1, 7)), int(rng.integers(0, 4)))
        lam = float(rng.uniform(0.0, 0.5))
        try:
            Q = solve_gen_lyapunov(sys, lam)
        except NotCertifiable:
            Q = solve_gen_lyapunov(sys, 0.0)
            lam = 0.0
        worst = max(worst, lyapunov_residual(sys, lam, Q))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max relative residual {worst:.2e}, {elapsed:.2f}s")
    assert worst <= 1e-10
    assert elapsed < 10.0


def test_criterion_3_series_oracle(record_property):
    t0 = time.perf_counter()
    sys = theta_system(THETA_STAR)
    law = paper_law(0.0)
    ds = generate_dataset(20, law, 0.45, 0.01, sys, seed=33)
    errs, worst_picard = [], 0.0
    for i in range(20):
        u = PiecewiseConstantSignal(0.01, ds.U[i])
        p = PiecewiseConstantSignal(0.01, ds.P[i])
        y_ref = simulate(sys, u, p, "rk4", 1e-4).y_T[0]
        terms = truncated_output_terms(sys, u, p, 1.2, 0.45, 3, 0.015).terms
        partial = np.cumsum([t[0] for t in terms])
        errs.append(np.abs(partial - y_ref) / abs(y_ref))
        y_pic = picard_output(sys, u, p, 3, 1e-4)[0]
        worst_picard = max(worst_picard, abs(y_pic - partial[3]) / abs(partial[3]))
    errs = np.array(errs)
    # The error statistic is the worst case over the draws, as for the 1% threshold.
    worst = errs.max(axis=0)
    per_draw = int(np.sum(np.any(np.diff(errs[:, 1:4], axis=1) > 0, axis=1)))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max rel err K=1..3 {', '.join(f'{e:.1e}' for e in worst[1:])}; "
                              f"picard {worst_picard:.1e}; non-monotone single draws {per_draw}/20; "
                              f"{elapsed:.1f}s")
    assert worst[3] <= 0.01
    assert np.all(np.diff(worst[1:4]) <= 0)
    assert worst_picard <= 0.005
    assert elapsed < 120


def test_criterion_4_output_bound(record_property):
    t0 = time.perf_counter()
    sys = theta_system(THETA_STAR)
    lam = 1.2
    h2 = math.sqrt(h2_norm_sq(sys, lam))
    rng = np.random.default_rng(44)
    N, K, ts = 1000, 45, 0.01
    U = rng.uniform(-15, 15, size=(N, K, 1))
    P = rng.uniform(-1, 1, size=(N, K, 1))
    Y, _ = simulate_batch(sys, U, P, ts, "rk4", ts / 10)
    lhs = np.abs(Y[:, -1, 0])
    rhs = (sys.n_p + 1) * h2 * np.sqrt(ts * np.sum(U**2, axis=(1, 2)))
    violations = int(np.sum(lhs > rhs))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"{violations} violations in {N} draws, max ratio {np.max(lhs / rhs):.3f}, "
                              f"{elapsed:.2f}s")
    assert violations == 0
    assert elapsed < 60


def test_criterion_5_identification(record_property):
    t0 = time.perf_counter()
    ds = generate_dataset(200, paper_law(0.0), 0.45, 0.01, theta_system(THETA_STAR), seed=55)
    est = identify(ds, 0.01)
    err = np.max(np.abs(np.array(est.theta) - np.array(THETA_STAR)))
    rec = np.max(np.abs(predict_recursion(ds, est.coefficients.a) - ds.Y[:, 2:, 0]))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max |theta_hat - theta*| {err:.2e}, recursion err {rec:.2e}, {elapsed:.2f}s")
    assert err <= 1e-6
    assert rec <= 1e-8
    assert elapsed < 5


def test_criterion_6_coverage(record_property):
    t0 = time.perf_counter()
    report = validate_pac_montecarlo(ExperimentConfig(delta=0.05), trials=100, N=200)
    elapsed = time.perf_counter() - t0
    lo, hi = report.clopper_pearson
    record_property("detail", f"{report.failures}/{report.trials} failures, CP95 [{lo:.3f}, {hi:.3f}], "
                              f"panel {len(report.panel)}, bound {report.bound:.3g}, "
                              f"max gap {report.max_gap:.3g}, {elapsed:.0f}s")
    assert len(report.panel) >= 5
    assert report.failure_fraction <= 0.05
    assert elapsed < 600


def test_criterion_7_qualitative_reproduction(record_property):
    t0 = time.perf_counter()
    base = ExperimentConfig()
    wins, pairs = 0, []
    for r in range(10):
        res = run_experiment(base.replication(r))
        first, last = res.rows[0], res.rows[-1]
        pairs.append((last.estimated_error, first.empirical_risk_validation))
        wins += last.estimated_error < first.empirical_risk_validation
    elapsed = time.perf_counter() - t0
    est = np.median([p[0] for p in pairs])
    val = np.median([p[1] for p in pairs])
    record_property("detail", f"{wins}/10 replications; median estimated error at N=10^4 {est:.3g} "
                              f"vs validation risk at N=200 {val:.3g}, {elapsed:.0f}s")
    assert elapsed < 900
    assert wins >= 7


def test_criterion_8_formula_regressions(record_property):
    cfg = PacConfig(K_l=1.0, L_u=0.5, c_y=0.5, c_E=1.0, n_p=1, delta=0.05, N=1)
    rep = theorem1_bound(cfg)
    R2, _ = corollary_excess_risk(cfg)
    sb = sufficient_bound(SufficientConditionInput(4.0, 1.0, 1.0, 1.0), 1.0, 1)
    errs = [abs(rep.R_delta - R_DELTA_C2) / R_DELTA_C2, abs(R2 - R2_DELTA_C2) / R2_DELTA_C2, abs(sb - 5.0) / 5.0]
    scaling = [theorem1_bound(cfg.with_N(n)).bound * math.sqrt(n) / rep.R_delta for n in (4, 200, 10_000)]
    record_property("detail", f"max rel err {max(errs):.1e}, 1/sqrt(N) deviation "
                              f"{max(abs(s - 1) for s in scaling):.1e}")
    assert max(errs) <= 1e-12
    assert theorem1_bound(cfg.with_N(4)).bound == rep.bound / 2
    assert all(abs(s - 1) <= 1e-15 for s in scaling)


def test_criterion_9_determinism(tmp_path, record_property, capsys):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["experiment", "--out", str(out)]) == 0
    capsys.readouterr()
    same = {name: (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
            for name in ("results.csv", "report.json", "figure.svg")}
    record_property("detail", ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in same.items()))
    assert all(same.values())
