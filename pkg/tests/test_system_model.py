import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpcs_attack.estimation import DetectorConfig, MitigationStrategy, simulate_loop
from cpcs_attack.seeding import rng_for
from cpcs_attack.system_model import (
    DimensionError,
    NoiseSpec,
    RiccatiConvergenceError,
    SystemModel,
    gaussian,
    load_model,
    observe,
    riccati_map,
    sample_noise,
    save_model,
    solve_riccati,
    step_plant,
    validate_model,
)

P_CLOSED = (1 + np.sqrt(41)) / 2


def test_scalar_model_passes_validation(scalar_model):
    report = validate_model(scalar_model)
    assert report.ok, report.failures()


def test_zero_control_matrix_reports_rank_zero():
    m = SystemModel(A=np.eye(2), B=np.zeros((2, 1)), C=np.eye(2), Q=np.eye(2), R=np.eye(2))
    report = validate_model(m)
    assert not report.checks["controllable"][0]
    assert "rank 0" in report.checks["controllable"][1]


def test_zero_measurement_noise_fails_pd():
    report = validate_model(SystemModel.scalar(r=0.0))
    assert not report.checks["R_pd"][0]
    assert report.checks["controllable"][0]


def test_dimension_mismatch_names_pair():
    m = SystemModel(A=np.eye(2), B=np.ones((3, 1)), C=np.eye(2), Q=np.eye(2), R=np.eye(2))
    with pytest.raises(DimensionError, match=r"\(A, B\)"):
        validate_model(m)


def test_riccati_scalar_closed_form(scalar_model, scalar_ssk):
    # positive root of P^2 - P - 10 = 0
    assert scalar_ssk.P_inf[0, 0] == pytest.approx(P_CLOSED, abs=1e-9)
    assert scalar_ssk.K[0, 0] == pytest.approx(P_CLOSED / (P_CLOSED + 10), abs=1e-10)
    assert scalar_ssk.P_e[0, 0] == pytest.approx((1 - scalar_ssk.K[0, 0]) * P_CLOSED, abs=1e-10)
    assert scalar_ssk.P_e[0, 0] == pytest.approx(2.7016, abs=1e-4)
    assert scalar_ssk.P_r[0, 0] == pytest.approx(P_CLOSED + 10, abs=1e-9)
    res = np.linalg.norm(riccati_map(scalar_model, scalar_ssk.P_inf) - scalar_ssk.P_inf)
    assert res < 1e-8


def test_riccati_gain_recomputes(scalar_ssk):
    P = scalar_ssk.P_inf
    K = P @ np.linalg.inv(P + 10.0)
    assert np.allclose(K, scalar_ssk.K, atol=1e-12)


def test_riccati_zero_process_noise():
    m = SystemModel(A=np.array([[0.5]]), B=np.eye(1), C=np.eye(1), Q=np.zeros((1, 1)), R=np.eye(1))
    ssk = solve_riccati(m)
    assert ssk.P_inf[0, 0] == pytest.approx(0.0, abs=1e-10)
    assert ssk.K[0, 0] == pytest.approx(0.0, abs=1e-10)


def test_riccati_nonconvergence_reports_residual(scalar_model):
    with pytest.raises(RiccatiConvergenceError) as err:
        solve_riccati(scalar_model, max_iter=2)
    assert err.value.residual > 0


def _iterates(model, k):
    P = np.zeros((model.n, model.n))
    out = [P]
    for _ in range(k):
        P = riccati_map(model, P)
        out.append(P)
    return out


def test_riccati_monotone_from_zero():
    two = SystemModel(
        A=np.array([[1.0, 0.1], [0.0, 0.9]]), B=np.eye(2), C=np.array([[1.0, 0.0]]),
        Q=np.diag([0.5, 0.2]), R=np.array([[2.0]]),
    )
    for model in (SystemModel.scalar(), two):
        its = _iterates(model, 40)
        for a, b in zip(its[:-1], its[1:]):
            assert np.linalg.eigvalsh(b - a).min() >= -1e-12


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.2, 1.2), q=st.floats(0.05, 5.0), r=st.floats(0.1, 20.0))
def test_riccati_fixed_point_property(a, q, r):
    model = SystemModel.scalar(a=a, q=q, r=r)
    ssk = solve_riccati(model)
    assert np.linalg.norm(riccati_map(model, ssk.P_inf) - ssk.P_inf) < 1e-8
    assert ssk.P_e[0, 0] >= 0 and ssk.P_r[0, 0] > 0


def test_step_plant_and_observe():
    m = SystemModel.scalar()
    assert step_plant(m, [0.0], [0.0], [0.0]) == pytest.approx([0.0])
    assert step_plant(m, [0.835], [-0.1], [0.0]) == pytest.approx([0.735])
    B = np.array([[2.0, 0.5], [0.1, 1.5]])
    m2 = SystemModel(A=np.eye(2), B=B, C=np.eye(2), Q=np.eye(2), R=np.eye(2))
    x0, xs = np.array([1.0, 0.9]), np.array([0.835, 0.835])
    u = np.linalg.solve(B, xs - x0)
    assert np.allclose(step_plant(m2, x0, u, np.zeros(2)), xs)
    assert np.allclose(observe(m2, x0, np.zeros(2)), x0)
    assert observe(m, [0.8], [0.02]) == pytest.approx([0.82])
    with pytest.raises(DimensionError):
        step_plant(m2, x0, [1.0], np.zeros(2))


def test_zero_covariance_noise_is_zero(rng):
    v = sample_noise(gaussian(np.zeros((1, 1))), rng, 1000)
    assert np.all(v == 0.0)
    m = SystemModel.scalar(r=0.0)
    assert observe(m, [0.7], sample_noise(gaussian(m.R), rng)) == pytest.approx([0.7])


@pytest.mark.parametrize("kind", ["gaussian", "logistic", "student_t"])
def test_noise_variance_matches(kind):
    spec = NoiseSpec(kind, np.array([[4e-4]]), 4.0)
    s = sample_noise(spec, rng_for(3, 0, kind), 1_000_000)
    assert abs(s.mean()) < 5 * 0.02 / 1000
    assert s.var() == pytest.approx(4e-4, rel=0.02)


def test_noise_covariance_2d():
    cov = np.array([[2.0, 0.6], [0.6, 1.0]])
    s = sample_noise(NoiseSpec("logistic", cov), rng_for(4), 1_000_000)
    assert np.allclose(np.cov(s.T), cov, rtol=0.02, atol=0.02)


def test_logistic_scale():
    spec = NoiseSpec("logistic", np.array([[4e-4]]))
    assert spec.scale[0] == pytest.approx(0.02 * np.sqrt(3) / np.pi)


def test_student_t_needs_dof_above_two():
    with pytest.raises(ValueError):
        NoiseSpec("student_t", np.eye(1), dof=2.0)


def test_sampling_deterministic_given_seed():
    spec = NoiseSpec("student_t", np.eye(2))
    a = sample_noise(spec, rng_for(9, 1, "w"), 50)
    b = sample_noise(spec, rng_for(9, 1, "w"), 50)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample_noise(spec, rng_for(9, 2, "w"), 50))


def test_model_json_round_trip(tmp_path):
    m = SystemModel(A=np.eye(2), B=np.ones((2, 1)), C=np.eye(2), Q=0.1 * np.eye(2), R=np.eye(2), X0=np.eye(2))
    save_model(m, tmp_path / "m.json", NoiseSpec("student_t", m.R, 5.0))
    back, noise = load_model(tmp_path / "m.json")
    assert np.array_equal(back.B, m.B) and np.array_equal(back.X0, m.X0)
    assert noise.kind == "student_t" and noise.dof == 5.0
    assert set(json.loads((tmp_path / "m.json").read_text())) >= {"A", "B", "C", "Q", "R", "X0"}


def test_steady_state_error_covariance_empirical(scalar_model, scalar_ssk):
    two = SystemModel(
        A=np.array([[0.9, 0.2], [0.0, 0.8]]), B=np.eye(2), C=np.eye(2),
        Q=np.array([[1.0, 0.3], [0.3, 0.5]]), R=np.diag([2.0, 1.0]),
    )
    for model in (scalar_model, two):
        ssk = solve_riccati(model)
        det = DetectorConfig.from_kalman(np.inf, ssk)
        tr = simulate_loop(model, ssk, det, MitigationStrategy("perfect"), 60, 20_000, rng_for(5),
                           x_init=np.zeros(model.n), x_hat_init=np.zeros(model.n))
        e = tr.error[:, -1]
        assert np.allclose(np.cov(e.T).reshape(model.n, model.n), ssk.P_e, rtol=0.05, atol=0.02 * ssk.P_e.max())
