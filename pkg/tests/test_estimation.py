import numpy as np
import pytest
from scipy import stats
from scipy.stats import chi2, norm

from cpcs_attack.estimation import (
    AttackContext,
    DetectorConfig,
    MitigationStrategy,
    attacker_kf_update,
    detect,
    detection_probability,
    error_step,
    kf_update,
    mitigate,
    residual,
    simulate_loop,
    trajectory_columns,
    write_trajectory_csv,
)
from cpcs_attack.seeding import rng_for
from cpcs_attack.system_model import SystemModel, solve_riccati


def test_residual_examples(scalar_model):
    assert residual([0.0], [0.0], [0.5], scalar_model) == pytest.approx([0.5])
    x_hat, u = np.array([0.3]), np.array([0.2])
    y = scalar_model.C @ (scalar_model.A @ x_hat + scalar_model.B @ u)
    assert residual(x_hat, u, y, scalar_model) == pytest.approx([0.0])
    assert residual(x_hat, u, y + 1.7, scalar_model) == pytest.approx([1.7])


def test_detect_examples(scalar_ssk, det10):
    assert detect([0.0], det10) == (0.0, 0)
    g, i = detect([12.0], det10)
    assert g == pytest.approx(144 / 13.7016, rel=1e-4) and i == 1
    cfg = DetectorConfig(eta=4.0, P_r=np.array([[1.0]]))
    assert detect([2.0], cfg) == (4.0, 0)  # boundary is no alarm


def test_detection_probability_closed_form(scalar_model, scalar_ssk, det10, rng):
    p0 = detection_probability([0.0], [0.0], scalar_model, scalar_ssk, det10)
    # next-step residual variance under e = 0 is C Q C' + R = 11, not P_r
    assert p0 == pytest.approx(2 * norm.sf(np.sqrt(10 * scalar_ssk.P_r[0, 0] / 11)), rel=1e-12)
    p10 = detection_probability([0.0], [10.0], scalar_model, scalar_ssk, det10)
    mc = detection_probability([0.0], [10.0], scalar_model, scalar_ssk, det10, 100_000, rng, method="mc")
    assert p10 == pytest.approx(0.3, abs=0.03)
    assert abs(p10 - mc) < 3 * np.sqrt(p10 * (1 - p10) / 100_000)
    zero = DetectorConfig.from_kalman(0.0, scalar_ssk)
    assert detection_probability([0.0], [3.0], scalar_model, scalar_ssk, zero) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        detection_probability([0.0], [1.0], scalar_model, scalar_ssk, det10, n_samples=50)


def test_detection_probability_monotone_in_magnitude(scalar_model, scalar_ssk, det10):
    p = [detection_probability([0.0], [a], scalar_model, scalar_ssk, det10) for a in range(0, 21, 2)]
    assert np.all(np.diff(p) >= 0)


def test_mitigate_examples(rng):
    y = np.array([1.0, 2.0])
    a = np.array([0.5, -0.5])
    for kind in ("perfect", "noisy", "model_only"):
        strat = MitigationStrategy(kind, 5.0 if kind == "noisy" else 0.0)
        assert np.array_equal(mitigate(y + a, 0, strat, a, rng), y + a)
    assert np.allclose(mitigate(y + a, 1, MitigationStrategy("perfect"), a), y)
    noisy = MitigationStrategy("noisy", 5.0)
    b = -(mitigate(np.zeros((200_000, 1)), np.ones(200_000, dtype=int), noisy, np.zeros(1), rng))
    assert b.var() == pytest.approx(25.0, rel=0.02)
    assert np.array_equal(mitigate(y + a, 1, MitigationStrategy("model_only"), a), y + a)


def test_kf_update_examples(scalar_model, scalar_ssk):
    x_hat, u = np.array([0.4]), np.array([0.1])
    pred = scalar_model.A @ x_hat + scalar_model.B @ u
    assert kf_update(x_hat, u, scalar_model.C @ pred, scalar_model, scalar_ssk) == pytest.approx(pred)
    assert kf_update([0.0], [0.0], [1.0], scalar_model, scalar_ssk)[0] == pytest.approx(0.2702, abs=1e-4)
    assert kf_update(x_hat, u, [50.0], scalar_model, scalar_ssk, skip_innovation=True) == pytest.approx(pred)


def test_error_step_examples(scalar_ssk):
    z = np.zeros(1)
    assert error_step(z, z, z, z, 0, z, scalar_ssk) == pytest.approx([0.0])
    e = np.array([1.5])
    assert error_step(e, z, z, [3.0], 1, [3.0], scalar_ssk) == pytest.approx(scalar_ssk.A_K @ e)
    assert error_step(z, z, z, [10.0], 0, z, scalar_ssk)[0] == pytest.approx(-2.7016, abs=1e-4)


def test_attacker_filter_identical_without_attack(scalar_model, scalar_ssk):
    det = DetectorConfig.from_kalman(5.0, scalar_ssk)
    for ref in ("own", "defender"):
        tr = simulate_loop(scalar_model, scalar_ssk, det, MitigationStrategy("perfect"), 40, 50, rng_for(1),
                           attacker_innovation=ref)
        assert np.array_equal(tr.x_hat_a, tr.x_hat)


def test_attacker_filter_converges_noiseless():
    model = SystemModel.scalar(q=0.0, r=1e-9)
    ssk = solve_riccati(SystemModel.scalar())  # any stabilising gain
    x, xa = 2.0, 0.0
    gaps = []
    for _ in range(10):
        x = x  # A = 1, u = 0, no noise
        xa = attacker_kf_update([xa], [xa], [0.0], [x], model, ssk)[0]
        gaps.append(x - xa)
    ratios = np.array(gaps[1:]) / np.array(gaps[:-1])
    assert np.allclose(ratios, ssk.A_K[0, 0])


def _two_d():
    return SystemModel(
        A=np.array([[1.0, 0.1], [0.0, 0.95]]), B=np.eye(2), C=np.array([[1.0, 0.0], [0.5, 1.0]]),
        Q=np.diag([0.3, 0.2]), R=np.diag([1.0, 2.0]),
    )


@pytest.mark.parametrize("kind", ["perfect", "noisy", "model_only"])
def test_error_representation_equivalence(kind):
    model = _two_d()
    ssk = solve_riccati(model)
    det = DetectorConfig.from_kalman(3.0, ssk)
    mit = MitigationStrategy(kind, 2.0 if kind == "noisy" else 0.0)
    attack = lambda ctx: np.full((ctx.x.shape[0], 2), 0.3 * ctx.t)  # noqa: E731
    control = lambda xh: -0.5 * xh  # noqa: E731
    tr = simulate_loop(model, ssk, det, mit, 25, 40, rng_for(2), attack=attack, control=control, keep_noise=True)
    e = tr.error[:, 0]
    for t in range(25):
        w, v = tr.extras["w"][:, t], tr.extras["v"][:, t + 1]
        i, a, delta = tr.i[:, t + 1], tr.a[:, t + 1], tr.extras["delta"][:, t + 1]
        if kind == "model_only":
            quiet = error_step(e, w, v, a, 0, delta, ssk)
            e = np.where(i[:, None] == 1, e @ model.A.T + w, quiet)
        else:
            e = error_step(e, w, v, a, i, delta, ssk)
        assert np.allclose(e, tr.error[:, t + 1], atol=1e-10)


def test_null_alarm_rate(scalar_model, scalar_ssk):
    two = _two_d()
    for model, ssk, eta in ((scalar_model, scalar_ssk, 5.0), (two, solve_riccati(two), 4.0)):
        det = DetectorConfig.from_kalman(eta, ssk)
        runs, T = 2000, 60
        x0 = np.zeros(model.n)
        tr = simulate_loop(model, ssk, det, MitigationStrategy("perfect"), T, runs, rng_for(8), x_init=x0, x_hat_init=x0)
        alarms = tr.i[:, 11:]  # past the start-up transient
        rate = alarms.mean()
        p = chi2.sf(eta, model.m)
        assert det.null_alarm_rate() == pytest.approx(p)
        # per-run autocorrelation is negligible; use run-level means for the standard error
        se = alarms.mean(axis=1).std(ddof=1) / np.sqrt(runs)
        assert abs(rate - p) < 3 * se


def test_perfect_mitigation_neutrality(scalar_model, scalar_ssk):
    forced = DetectorConfig.from_kalman(0.0, scalar_ssk)  # g > 0 almost surely, so i = 1 every step
    free = DetectorConfig.from_kalman(np.inf, scalar_ssk)
    attack = lambda ctx: np.full((ctx.x.shape[0], 1), 4.0)  # noqa: E731
    x0 = np.zeros(1)
    a = simulate_loop(scalar_model, scalar_ssk, forced, MitigationStrategy("perfect"), 20, 10_000, rng_for(11),
                      attack=attack, x_init=x0, x_hat_init=x0)
    b = simulate_loop(scalar_model, scalar_ssk, free, MitigationStrategy("perfect"), 20, 10_000, rng_for(12),
                      x_init=x0, x_hat_init=x0)
    assert a.i[:, 1:].all()
    assert stats.ks_2samp(a.error[:, -1, 0], b.error[:, -1, 0]).pvalue > 0.001


def test_trajectory_csv(tmp_path, scalar_model, scalar_ssk, det10):
    tr = simulate_loop(scalar_model, scalar_ssk, det10, MitigationStrategy("perfect"), 5, 2, rng_for(0))
    write_trajectory_csv(tr, 1, tmp_path / "run.csv", ["config_sha256=abc"])
    lines = (tmp_path / "run.csv").read_text().splitlines()
    assert lines[0] == "# config_sha256=abc"
    assert lines[1].split(",") == trajectory_columns(1, 1, 1)
    assert len(lines) == 2 + 6


def test_attack_context_views():
    ctx = AttackContext(3, np.array([[1.0]]), np.array([[0.4]]), np.array([[0.9]]), rng_for(0))
    assert np.allclose(ctx.error, 0.6) and np.allclose(ctx.estimated_error, 0.5)
