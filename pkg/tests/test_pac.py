import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lpv_paclab.errors import ConfigError
from lpv_paclab.lpv_core import THETA_STAR, theta_system
from lpv_paclab.pac import (
    LossSpec,
    PacConfig,
    corollary_excess_risk,
    empirical_rademacher,
    empirical_risk,
    exact_rademacher,
    loss,
    loss_batch,
    model_outputs,
    multi_output_bound,
    r2_delta,
    r_delta,
    rademacher_from_losses,
    theorem1_bound,
    theorem2_bound,
)
from lpv_paclab.signals import Dataset, DatasetMeta, generate_dataset, paper_law

SYS = theta_system(THETA_STAR)


def _cfg(**kw):
    base = dict(K_l=1.0, L_u=0.5, c_y=0.5, c_E=1.0, n_p=1, delta=0.05, N=1)
    base.update(kw)
    return PacConfig(**base)


def test_loss_examples():
    assert loss(LossSpec(), 1.0, -2.0) == 3.0
    assert loss(LossSpec(), [3.0, 0.0], [0.0, 4.0]) == 5.0
    spec = LossSpec("squared-clipped", c_max=2.0)
    assert loss(spec, 1.5, -0.5) == 4.0
    assert spec.lipschitz == 4.0
    with pytest.raises(ConfigError, match="2.5"):
        loss(spec, 2.5, 0.0)


def test_loss_spec_validation():
    with pytest.raises(ConfigError):
        LossSpec("hinge")
    with pytest.raises(ConfigError):
        LossSpec("squared-clipped")
    with pytest.raises(ConfigError, match="shapes"):
        loss_batch(LossSpec(), np.zeros(3), np.zeros(4))


def test_empirical_risk_of_generating_system_is_zero():
    ds = generate_dataset(20, paper_law(0.0), 0.45, 0.01, SYS, seed=1)
    assert empirical_risk(LossSpec(), SYS, ds) <= 1e-12


def test_empirical_risk_single_sample():
    meta = DatasetMeta(None, 0.45, 0.01)
    Y = np.zeros((1, 46, 1))
    Y[0, -1, 0] = 3.0
    ds = Dataset(np.zeros((1, 45, 1)), np.zeros((1, 45, 1)), Y, meta)
    assert empirical_risk(LossSpec(), SYS, ds) == 3.0


def test_empirical_risk_empty_dataset():
    with pytest.raises(ConfigError, match="empty"):
        empirical_risk(LossSpec(), SYS, Dataset.empty(DatasetMeta(None, 0.45, 0.01)))


def test_empirical_risk_reverse_triangle():
    ds = generate_dataset(30, paper_law(0.05), 0.45, 0.01, SYS, seed=2)
    other = theta_system((0.12, 8.0, 1.0))
    gap = abs(empirical_risk(LossSpec(), SYS, ds) - empirical_risk(LossSpec(), other, ds))
    spread = np.mean(np.abs(model_outputs(SYS, ds) - model_outputs(other, ds)))
    assert gap <= spread + 1e-12


def test_theorem1_zero_constants():
    rep = theorem1_bound(_cfg(L_u=0.0, c_y=0.0, N=100))
    assert rep.c == 0.0 and rep.bound == 0.0


def test_theorem1_reference_values():
    rep = theorem1_bound(_cfg())
    assert rep.c == 2.0
    assert rep.R_delta == pytest.approx(27.683314996812774, rel=1e-14)
    assert rep.N_m[0.1] == pytest.approx((rep.R_delta / 0.1) ** 2)
    assert rep.confidence == 0.95
    assert not rep.heuristic


def test_theorem1_quadrupling_N_halves_bound():
    for N in (1, 7, 250):
        assert theorem1_bound(_cfg(N=4 * N)).bound == pytest.approx(theorem1_bound(_cfg(N=N)).bound / 2, rel=1e-15)


@settings(max_examples=50, deadline=None)
@given(d1=st.floats(1e-6, 0.99), d2=st.floats(1e-6, 0.99), c=st.floats(0.0, 1e3))
def test_r_delta_monotone_in_delta(d1, d2, c):
    lo, hi = sorted((d1, d2))
    assert r_delta(c, lo) >= r_delta(c, hi)
    assert r2_delta(c, lo) >= r_delta(c, lo)


def test_theorem1_bound_monotone_in_constants():
    base = theorem1_bound(_cfg(N=50)).bound
    assert theorem1_bound(_cfg(N=50, c_E=3.0)).bound > base
    assert theorem1_bound(_cfg(N=50, delta=0.01)).bound > base
    assert theorem1_bound(_cfg(N=51)).bound < base


def test_heuristic_provenance_flag():
    rep = theorem1_bound(_cfg(provenance={"L_u": "declared", "c_y": "estimated-from-data"}))
    assert rep.heuristic and rep.to_dict()["heuristic"]
    with pytest.raises(ConfigError):
        _cfg(provenance={"c_y": "guessed"})


def test_pac_config_validation_and_round_trip():
    cfg = _cfg(N=10)
    assert PacConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError, match="K_l"):
        PacConfig.from_dict({"L_u": 1})
    for bad in (dict(delta=0.0), dict(delta=1.0), dict(N=0), dict(c_E=-1.0), dict(n_p=-1), dict(L_u=math.inf)):
        with pytest.raises(ConfigError):
            _cfg(**bad)


def test_theorem2_substitution_identity():
    # With Rademacher complexity c/sqrt(N) and range B = c the bound equals (2c + 4c sqrt(2 ln(4/delta)))/sqrt(N).
    c, N, delta = 1.7, 300, 0.05
    assert theorem2_bound(c / math.sqrt(N), c, N, delta) == pytest.approx(r_delta(c, delta) / math.sqrt(N), rel=1e-14)
    with pytest.raises(ConfigError):
        theorem2_bound(-1.0, 1.0, 10, 0.05)
    with pytest.raises(ConfigError):
        theorem2_bound(0.1, 1.0, 0, 0.05)


def test_corollary_excess_risk():
    R2, table = corollary_excess_risk(_cfg())
    assert R2 == pytest.approx(35.85961021492205, rel=1e-14)
    assert table[0.01] == pytest.approx((R2 / 0.01) ** 2)
    with pytest.raises(ConfigError, match="epsilon"):
        corollary_excess_risk(_cfg(), eps=(0.1, 0.0))
    with pytest.raises(ConfigError, match="epsilon"):
        theorem1_bound(_cfg(), eps=(-0.5,))
    with pytest.raises(ConfigError):
        r2_delta(1.0, 1.5)


def test_multi_output_bound():
    reps = [theorem1_bound(_cfg(N=100, delta=0.01, c_y=v)) for v in (0.5, 3.0)]
    mob = multi_output_bound(reps, 0.01)
    assert mob.bound == max(r.bound for r in reps)
    assert mob.confidence == pytest.approx(0.98)
    with pytest.raises(ConfigError, match="delta_each"):
        multi_output_bound(reps, 0.02)
    with pytest.raises(ConfigError, match="share N"):
        multi_output_bound([reps[0], theorem1_bound(_cfg(N=5, delta=0.01))], 0.01)
    with pytest.raises(ConfigError):
        multi_output_bound([], 0.01)


def test_multi_output_bound_warns_when_vacuous():
    reps = [theorem1_bound(_cfg(delta=0.4)) for _ in range(3)]
    with pytest.warns(UserWarning, match="vacuous"):
        mob = multi_output_bound(reps, 0.4)
    assert mob.confidence < 0


def test_rademacher_all_zero_losses():
    assert exact_rademacher(np.zeros((3, 6))) == 0.0
    assert rademacher_from_losses(np.zeros((3, 6)), 100, 0).estimate == 0.0


def test_rademacher_singleton_class_has_zero_expectation():
    assert exact_rademacher(np.array([[1.0, 2.0, 3.0, 4.0]])) == pytest.approx(0.0, abs=1e-15)


def test_rademacher_symmetric_pair_exact():
    v = 2.5
    L = np.array([[v] * 4, [-v] * 4])
    # E|sum of four signs| = 1.5
    assert exact_rademacher(L) == 0.375 * v


def test_rademacher_monte_carlo_matches_enumeration():
    rng = np.random.default_rng(5)
    L = rng.uniform(0, 1, size=(6, 12))
    exact = exact_rademacher(L)
    est = rademacher_from_losses(L, 4000, seed=9)
    assert abs(est.estimate - exact) <= 3 * est.stderr
    with pytest.raises(ConfigError):
        exact_rademacher(np.zeros((1, 21)))
    with pytest.raises(ConfigError):
        rademacher_from_losses(L, 0, 0)


def test_empirical_rademacher_on_grid():
    ds = generate_dataset(40, paper_law(0.05), 0.45, 0.01, SYS, seed=3)
    grid = [theta_system((t1, 10.0, 1.0)) for t1 in (0.08, 0.1, 0.12)]
    est = empirical_rademacher(LossSpec(), grid, ds, 500, seed=1)
    assert est.estimate >= 0 or abs(est.estimate) <= 3 * est.stderr
    assert est.consistent_with(theorem1_bound(_cfg(N=40, L_u=20.0, c_y=20.0)).c, 40)
    with pytest.raises(ConfigError):
        empirical_rademacher(LossSpec(), [], ds, 10, 0)
