import json
import math

import numpy as np
import pytest

from lpv_paclab.errors import ConfigError
from lpv_paclab.experiment import (
    CoverageReport,
    ExperimentConfig,
    ExperimentRow,
    default_panel,
    derive_seed,
    emit_plot,
    run_experiment,
    validate_pac_montecarlo,
    write_artifacts,
)
from lpv_paclab.lpv_core import THETA_STAR, ThetaFamily
from lpv_paclab.signals import paper_law

SMALL = ExperimentConfig(N_grid=(20, 80), M=200)


def _row(N, est, val):
    return ExperimentRow(N, (0.1, 10.0, 1.0), 0.0, val, est, True)


def test_derive_seed_is_deterministic_and_distinct():
    assert derive_seed(1, 0) == derive_seed(1, 0)
    assert len({derive_seed(1, j) for j in range(50)}) == 50
    assert derive_seed(1, 0) != derive_seed(2, 0)


def test_replications_change_every_seed():
    rep = SMALL.replication(3)
    assert all(rep.seeds[k] != SMALL.seeds[k] for k in SMALL.seeds)
    assert rep.replication(0) != SMALL.replication(0)
    assert SMALL.replication(3) == rep


def test_bound_column_scales_as_inverse_sqrt_n():
    res = run_experiment(ExperimentConfig(N_grid=(50, 200, 800), M=100))
    b = [r.pac_bound * math.sqrt(r.N) for r in res.rows]
    assert max(b) - min(b) <= 1e-12 * b[0]
    assert res.report["constants"]["heuristic"] is True


def test_noiseless_experiment_recovers_truth():
    res = run_experiment(ExperimentConfig(N_grid=(30, 60), M=100, law=paper_law(0.0)))
    for r in res.rows:
        assert r.empirical_risk_train <= 1e-8
        assert r.empirical_risk_validation <= 1e-8
        np.testing.assert_allclose(r.theta_hat, THETA_STAR, rtol=1e-7)
        assert r.status.startswith("non-member")


def test_artifacts_are_written_and_consistent(tmp_path):
    res = run_experiment(SMALL)
    paths = write_artifacts(res, tmp_path / "out")
    report = json.loads(paths["json"].read_text())
    assert [r["N"] for r in report["rows"]] == [20, 80]
    lines = paths["csv"].read_text().splitlines()
    assert lines[0].startswith("N,theta1") and len(lines) == 3
    assert paths["svg"].read_text().startswith("<svg")
    assert "bound_below_first_validation" in report


def test_emit_plot_is_deterministic():
    rows = [_row(200, 3.0, 1.5), _row(1000, 1.4, 1.2), _row(10000, 0.5, 1.1)]
    svg = emit_plot(rows)
    assert svg == emit_plot(list(rows))
    assert svg.count("<circle") == 6 and svg.count("<polyline") == 2
    assert ">10000<" in svg and "estimated error" in svg


def test_emit_plot_single_row():
    svg = emit_plot([_row(200, 2.0, 2.0)])
    assert svg.count("<circle") == 2 and "<polyline" not in svg


def test_emit_plot_rejects_empty_input():
    with pytest.raises(ConfigError, match="nothing to plot"):
        emit_plot([])
    with pytest.raises(ConfigError):
        emit_plot([_row(200, float("nan"), 1.0)])


def test_default_panel_membership():
    panel = default_panel()
    assert len(panel) == 27
    members = [t for t in panel if ThetaFamily().contains(t)]
    assert len(members) == 21


def test_montecarlo_empty_panel_is_an_error():
    with pytest.warns(UserWarning, match="excluded"), pytest.raises(ConfigError, match="no member"):
        validate_pac_montecarlo(SMALL, 2, 20, panel=[THETA_STAR])


def test_montecarlo_inflated_bound_never_fails():
    panel = default_panel()[:2]
    rep = validate_pac_montecarlo(SMALL, 5, 30, panel=panel, bound_scale=1000.0)
    assert rep.failures == 0 and rep.passed
    assert rep.to_dict()["clopper_pearson_95"][0] == 0.0


def test_montecarlo_zero_bound_counts_positive_gaps():
    rep = validate_pac_montecarlo(SMALL, 4, 30, panel=default_panel()[:1], bound_scale=0.0)
    assert rep.bound == 0.0 and rep.max_gap > 0
    assert rep.failures >= 1 and not rep.passed


def test_clopper_pearson_interval():
    rep = CoverageReport(100, 5, 200, 0.05, 1.0, (), (), 0.0)
    lo, hi = rep.clopper_pearson
    assert lo == pytest.approx(0.016431, abs=1e-5)
    assert hi == pytest.approx(0.112835, abs=1e-5)


def test_config_round_trip_and_errors(tmp_path):
    cfg = ExperimentConfig(N_grid=(10, 20), M=50)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError, match="unknown"):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match="ascending"):
        ExperimentConfig.from_dict({"N_grid": [20, 10]})
    with pytest.raises(ConfigError, match="delta"):
        ExperimentConfig.from_dict({"delta": 2})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(bad)
