import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2

from cpcs_attack.estimation import DetectorConfig, MitigationStrategy
from cpcs_attack.fpmd import (
    PathNode,
    cumulative_error,
    fp_cost,
    md_cost,
    moment_step,
    monte_carlo_error,
    oracle_reference_error,
    start_node,
    step_params,
)
from cpcs_attack.seeding import rng_for


def _k(ssk):
    return float(ssk.K[0, 0])


def test_single_step_matches_direct_computation(scalar_model, scalar_ssk):
    # a = 0: e' = A_K e + W_K w - K v + i K b with b independent of everything else,
    # so E[e'^2] = A_K^2 P_e + W_K^2 Q + K^2 R + K^2 sigma^2 P(alarm), and P(alarm) = P(chi2_1 > eta)
    K, AK, WK, Pe = _k(scalar_ssk), scalar_ssk.A_K[0, 0], scalar_ssk.W_K[0, 0], scalar_ssk.P_e[0, 0]
    base = AK**2 * Pe + WK**2 * 1.0 + K**2 * 10.0
    assert base == pytest.approx(Pe, rel=1e-9)
    for eta, sigma in ((np.inf, 0.0), (5.0, 10.0), (0.0, 15.0)):
        cfg = DetectorConfig.from_kalman(eta, scalar_ssk)
        res = cumulative_error([0.0], scalar_model, scalar_ssk, cfg, MitigationStrategy("noisy", sigma))
        assert res.per_step[0] == pytest.approx(base + K**2 * sigma**2 * chi2.sf(eta, 1), rel=1e-9)


def test_steady_state_without_attack(scalar_model, scalar_ssk, perfect):
    cfg = DetectorConfig.from_kalman(5.0, scalar_ssk)
    res = cumulative_error(np.zeros(12), scalar_model, scalar_ssk, cfg, perfect)
    assert np.allclose(res.per_step, scalar_ssk.P_e[0, 0], rtol=1e-9)
    assert res.pruned_mass < 1e-6 and not res.warnings


def test_infinite_threshold_has_no_alarm_branch(scalar_model, scalar_ssk):
    cfg = DetectorConfig.from_kalman(np.inf, scalar_ssk)
    node = start_node(scalar_ssk)
    mit = MitigationStrategy("noisy", 5.0)
    quiet = moment_step(node, 3.0, 0, scalar_model, scalar_ssk, cfg, mit)
    alarm = moment_step(node, 3.0, 1, scalar_model, scalar_ssk, cfg, mit)
    assert quiet.prob == pytest.approx(1.0) and alarm.prob == 0.0 and alarm.dead
    K, AK = _k(scalar_ssk), scalar_ssk.A_K[0, 0]
    assert quiet.mean == pytest.approx(-K * 3.0)
    assert quiet.variance == pytest.approx(scalar_ssk.P_e[0, 0], rel=1e-9)
    assert AK == pytest.approx(1 - K)


def test_symmetric_truncation_zero_mean(scalar_model, scalar_ssk, det10, perfect):
    node = start_node(scalar_ssk)
    for i in (0, 1):
        child = moment_step(node, 0.0, i, scalar_model, scalar_ssk, det10, perfect)
        assert child.mean == pytest.approx(0.0, abs=1e-12)


def test_step_params_limits(scalar_model, scalar_ssk, det10, perfect):
    p = step_params(start_node(scalar_ssk), 2.0, 0, scalar_model, scalar_ssk, det10, perfect)
    tau = np.sqrt(10 * scalar_ssk.P_r[0, 0])
    assert p.limits == pytest.approx((-tau, tau))
    assert p.S_yy == pytest.approx(scalar_ssk.P_r[0, 0])
    assert p.y_bar == pytest.approx(2.0)


def test_path_probability_conservation(scalar_model, scalar_ssk):
    cfg = DetectorConfig.from_kalman(3.0, scalar_ssk)
    mit = MitigationStrategy("noisy", 5.0)
    level = [start_node(scalar_ssk)]
    attack = [0.0, 4.0, 8.0, 2.0, 6.0, 10.0]
    res = cumulative_error(attack, scalar_model, scalar_ssk, cfg, mit, prune_tol=0.0)
    for t, a in enumerate(attack):
        level = [moment_step(n, a, i, scalar_model, scalar_ssk, cfg, mit) for n in level for i in (0, 1)]
        assert sum(n.prob for n in level) == pytest.approx(1.0, abs=1e-12)
        assert sum(n.prob * n.second_moment for n in level) == pytest.approx(res.per_step[t], rel=1e-10)


@settings(max_examples=60, deadline=None)
@given(
    mean=st.floats(-20, 20), var=st.floats(0, 50), a=st.floats(0, 20), eta=st.floats(0, 30),
    sigma=st.floats(0, 15), i=st.integers(0, 1), kind=st.sampled_from(["noisy", "model_only"]),
)
def test_node_variance_nonnegative(scalar_model, scalar_ssk, mean, var, a, eta, sigma, i, kind):
    node = PathNode((), 1.0, mean, var + mean**2)
    cfg = DetectorConfig.from_kalman(eta, scalar_ssk)
    child = moment_step(node, a, i, scalar_model, scalar_ssk, cfg, MitigationStrategy(kind, sigma if kind == "noisy" else 0))
    assert child.second_moment - child.mean**2 >= -1e-9 * max(1.0, child.second_moment)
    assert 0.0 <= child.prob <= 1.0


@pytest.mark.parametrize("attack", ["zero", "ramp"])
def test_recursion_matches_monte_carlo(scalar_model, scalar_ssk, attack):
    cfg = DetectorConfig.from_kalman(5.0, scalar_ssk)
    mit = MitigationStrategy("noisy", 10.0)
    seq = np.zeros(20) if attack == "zero" else 0.01 * np.arange(1, 21)
    res = cumulative_error(seq, scalar_model, scalar_ssk, cfg, mit)
    mc, se = monte_carlo_error(seq, scalar_model, scalar_ssk, cfg, mit, 100_000, rng_for(31, 0, attack))
    assert np.all(np.abs(res.per_step / mc - 1) < 0.03)
    assert np.all(np.abs(res.per_step - mc) < 4 * se)


def test_pruning_warning(scalar_model, scalar_ssk):
    cfg = DetectorConfig.from_kalman(5.0, scalar_ssk)
    res = cumulative_error(np.full(10, 10.0), scalar_model, scalar_ssk, cfg, MitigationStrategy("noisy", 5.0), prune_tol=1e-2)
    assert res.pruned_mass > 1e-4 and res.warnings


def test_node_cap_limits_tree(scalar_model, scalar_ssk):
    cfg = DetectorConfig.from_kalman(5.0, scalar_ssk)
    res = cumulative_error(np.full(12, 6.0), scalar_model, scalar_ssk, cfg, MitigationStrategy("noisy", 5.0),
                           prune_tol=0.0, max_nodes=64)
    assert res.live_nodes.max() <= 64


def test_oracle_reference_examples(scalar_model, scalar_ssk):
    plain = oracle_reference_error(np.zeros(10), scalar_model, scalar_ssk, MitigationStrategy("noisy", 5.0))
    assert np.allclose(plain, scalar_ssk.P_e[0, 0])
    perfect = oracle_reference_error(np.full(10, 7.0), scalar_model, scalar_ssk, MitigationStrategy("perfect"))
    assert np.allclose(perfect, plain)
    noisy = oracle_reference_error(np.full(10, 7.0), scalar_model, scalar_ssk, MitigationStrategy("noisy", 5.0))
    assert noisy[0] - plain[0] == pytest.approx(_k(scalar_ssk) ** 2 * 25.0, rel=1e-9)
    # Monte Carlo with a detector that always fires on the attacked steps
    always = DetectorConfig.from_kalman(0.0, scalar_ssk)
    mc, se = monte_carlo_error(np.full(10, 7.0), scalar_model, scalar_ssk, always, MitigationStrategy("noisy", 5.0),
                               50_000, rng_for(4))
    assert np.all(np.abs(mc - noisy) < 4 * se)


def test_fp_cost_examples(scalar_model, scalar_ssk):
    for eta in (0.0, 5.0, 10.0, 15.0, np.inf):
        assert abs(fp_cost(eta, 0.0, scalar_model, scalar_ssk, 20)) < 1e-6
    assert fp_cost(np.inf, 15.0, scalar_model, scalar_ssk, 20) == pytest.approx(0.0, abs=1e-9)
    costs = [fp_cost(eta, 15.0, scalar_model, scalar_ssk, 20) for eta in (0, 5, 10, 15)]
    assert np.all(np.diff(costs) < 0)


def test_md_cost_examples(scalar_model, scalar_ssk):
    seq = np.full(20, 10.0)
    assert md_cost(0.0, 5.0, seq, scalar_model, scalar_ssk, 20) == pytest.approx(0.0, abs=1e-6)
    assert md_cost(10.0, 5.0, np.zeros(20), scalar_model, scalar_ssk, 20) == pytest.approx(0.0, abs=1e-6)
    costs = [md_cost(eta, 5.0, seq, scalar_model, scalar_ssk, 20) for eta in (0, 5, 10, 15)]
    assert np.all(np.diff(costs) >= 0)


@settings(max_examples=25, deadline=None)
@given(eta=st.floats(0, 30), sigma=st.floats(0, 20))
def test_fp_cost_nonnegative(scalar_model, scalar_ssk, eta, sigma):
    assert fp_cost(eta, sigma, scalar_model, scalar_ssk, 10) >= -1e-6
