import math

import numpy as np
import pytest
from scipy import integrate

from smcbench.models import (
    BearingModel,
    BearingParams,
    EconModel,
    EconParams,
    LinearGaussianModel,
    StudentTParams,
    StudentTTarget,
    bearing_angles,
    bearing_matrices,
    bearing_measure,
    bearing_step,
    circle_sensors,
    econ_log_likelihood,
    econ_step,
    kalman_oracle,
    random_walk_log_density,
    random_walk_propose,
    student_t_log_pdf,
)


# ------------------------------------------------------------ econometrics


def test_econ_params():
    p = EconParams()
    assert (p.phi, p.sigma, p.beta) == (0.9731, 0.1726, 0.6338)
    assert p.stationary_var == pytest.approx(0.1726**2 / (1 - 0.9731**2))
    with pytest.raises(ValueError):
        EconParams(phi=1.0)


def test_econ_step_without_noise():
    p = EconParams(sigma=0.0)
    x = np.array([0.5, -1.0])
    assert np.array_equal(econ_step(x, np.random.default_rng(0), p), p.phi * x)


def test_econ_log_likelihood_at_zero():
    p = EconParams()
    x = np.array([0.3])
    assert econ_log_likelihood(x, 0.0, p)[0] == pytest.approx(-0.5 * math.log(2 * math.pi * p.beta**2 * math.exp(0.3)))


def test_econ_simulation_reproducible():
    m = EconModel()
    a = m.simulate(20, np.random.default_rng(3))
    b = m.simulate(20, np.random.default_rng(3))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert np.all(np.isfinite(m.log_weight(a[0], a[0], a[1][0])))


# ---------------------------------------------------------------- bearings


def test_bearing_covariance_entries_and_psd():
    A, S = bearing_matrices(1.0)
    assert S[0, 0] == pytest.approx(5 / 3) and S[0, 1] == pytest.approx(5 / 2) and S[1, 1] == 5
    assert np.array_equal(S, S.T)
    assert np.all(np.linalg.eigvalsh(S) >= -1e-12)
    assert A[0, 1] == 1 and A[2, 3] == 1


def test_bearing_noise_matches_covariance():
    p = BearingParams()
    draws = bearing_step(np.zeros((100_000, 4)), np.random.default_rng(0), p)
    emp = np.cov(draws.T)
    assert np.allclose(emp, p.Sigma, rtol=0.05, atol=0.05 * np.abs(p.Sigma).max())


def test_bearing_step_without_noise():
    out = bearing_step(np.array([[1.0, 1, 0, 0]]), None, BearingParams())
    assert out[0].tolist() == [2, 1, 0, 0]


def test_bearing_angle_and_sensor_coincidence():
    assert bearing_angles(np.array([1.0, 0, 1, 0]), np.zeros((1, 2)))[0] == pytest.approx(math.pi / 4)
    with pytest.raises(ValueError):
        bearing_angles(np.array([0.0, 0, 0, 0]), np.zeros((1, 2)))


def test_default_single_sensor_at_origin():
    p = BearingParams()
    assert np.allclose(p.sensors, [[0.0, 0.0]], atol=1e-12)
    x = np.array([3.0, 0, 2.0, 0])
    assert bearing_measure(x, p.sensors, None)[0] == pytest.approx(math.atan(2 / 3))


def test_multi_sensor_vectorised_matches_loop():
    sensors = np.array([[1.0, 0], [0, 1], [-1, 0], [0, -1]])
    x = np.array([[2.0, 0, 3.0, 0], [-4.0, 0, 0.5, 0]])
    vec = bearing_measure(x, sensors, None)
    for i, xi in enumerate(x):
        for k, (sx, sy) in enumerate(sensors):
            assert vec[i, k] == pytest.approx(math.atan2(xi[2] - sy, xi[0] - sx))


def test_circle_sensors_layout():
    s = circle_sensors(4, np.array([10.0, 5.0]), 2.0)
    assert np.allclose(s, [[8, 5], [10, 3], [12, 5], [10, 7]])
    m = BearingModel(BearingParams(D=8))
    assert m.D == 8
    states, ys = m.simulate(5, np.random.default_rng(0))
    assert ys.shape == (5, 8)
    assert np.all(np.isfinite(m.log_weight(states, states, ys[0])))


# ---------------------------------------------------------------- Student-t


def test_student_t_examples():
    assert student_t_log_pdf(0.0, StudentTParams(nu=1, mu=0)) == pytest.approx(math.log(1 / math.pi))
    p = StudentTParams()
    assert student_t_log_pdf(p.mu + 1.7, p) == student_t_log_pdf(p.mu - 1.7, p)
    with pytest.raises(ValueError):
        StudentTParams(nu=0)


@pytest.mark.parametrize("nu", [1, 5, 30])
def test_student_t_integrates_to_one(nu):
    p = StudentTParams(nu=nu, mu=3)
    f = lambda x: math.exp(student_t_log_pdf(x, p))  # noqa: E731
    total, _ = integrate.quad(f, -np.inf, np.inf, epsabs=1e-12, epsrel=1e-12)
    assert total == pytest.approx(1, abs=1e-6)
    if nu == 5:
        inner, _ = integrate.quad(f, -50, 50, epsabs=1e-12, epsrel=1e-12, limit=200)
        assert inner == pytest.approx(1, abs=1e-4)


def test_target_point_matches_vectorised():
    t = StudentTTarget()
    xs = np.linspace(-10, 10, 21)
    vec = t.log_target(xs[:, None])
    assert np.allclose([t.log_target_point(float(v)) for v in xs], vec, rtol=0, atol=1e-13)
    assert t.log_target_point(np.array([1.5])) == pytest.approx(t.log_target(np.array([[1.5]]))[0])


def test_random_walk():
    rng = np.random.default_rng(0)
    x = np.zeros((100_000, 1))
    base = np.full((3, 1), 2.5)
    assert np.array_equal(random_walk_propose(base, 1e-300, rng), base)
    d = random_walk_propose(x, 0.5, rng) - x
    assert d.var() == pytest.approx(0.25, rel=0.02)
    a, b = rng.random((5, 2)), rng.random((5, 2))
    assert np.allclose(random_walk_log_density(a, b, 0.5), random_walk_log_density(b, a, 0.5))
    t = StudentTTarget()
    assert np.array_equal(t.log_forward(a[:, :1], b[:, :1]), t.log_backward(b[:, :1], a[:, :1]))


# ----------------------------------------------------------- linear-Gaussian


def test_kalman_noise_free_measurement():
    m = LinearGaussianModel(r=0.0)
    means, variances = kalman_oracle(m, [1.0, -2.0, 0.5])
    assert means.tolist() == [1.0, -2.0, 0.5] and np.all(variances == 0)


def test_kalman_no_process_noise_shrinks_variance():
    _, variances = kalman_oracle(LinearGaussianModel(a=1.0, q=0.0), np.zeros(20))
    assert np.all(np.diff(variances) < 0)


def test_kalman_matches_importance_sampling():
    m = LinearGaussianModel()
    y = 1.3
    rng = np.random.default_rng(0)
    x0 = m.sample_prior(1_000_000, rng)
    x1 = m.propose(x0, y, rng)
    logw = m.log_weight(x1, x0, y)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    est = float(w @ x1[:, 0])
    mean, var = kalman_oracle(m, [y])
    ess = 1 / np.sum(w**2)
    assert abs(est - mean[0]) < 3 * math.sqrt(var[0] / ess)
