import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quadobs import observers as obs
from quadobs.feasible import weighted_sq_norm
from quadobs.system import NumericError, RngStream, SystemModel


def model_1d(A=1.0, C=1.0, Q=0.0, R=1.0, V=1.0):
    f = lambda v: np.array([[float(v)]])
    return SystemModel(f(A), f(0.0), f(C), f(Q), f(R), f(V))


def rotation_model(theta=0.3):
    c, s = np.cos(theta), np.sin(theta)
    return SystemModel(np.array([[c, -s], [s, c]]), np.zeros((2, 1)), np.eye(2),
                       np.zeros((2, 2)), np.eye(2), np.diag([1.0, 2.0]))


def loop_predict(xhat, P, A, B, Q, u):
    n = len(xhat)
    xp = [sum(A[i][j] * xhat[j] for j in range(n)) + sum(B[i][j] * u[j] for j in range(len(u)))
          for i in range(n)]
    Pp = [[sum(A[i][a] * P[a][b] * A[j][b] for a in range(n) for b in range(n)) + Q[i][j]
           for j in range(n)] for i in range(n)]
    return np.array(xp), np.array(Pp)


# --- linear observer -------------------------------------------------------------

def test_predict_identity_and_process_noise():
    m = SystemModel(np.eye(2), np.zeros((2, 1)), np.eye(2), np.eye(2), np.eye(2), np.eye(2))
    s = obs.LinearObserverState(np.array([1.0, -1.0]), 0.3 * np.eye(2))
    p = obs.kf_predict(s, m, np.zeros(1))
    np.testing.assert_array_equal(p.xhat, s.xhat)
    np.testing.assert_allclose(p.P, s.P + np.eye(2))


def test_predict_matches_loop_oracle():
    rng = np.random.default_rng(5)
    A, B = rng.standard_normal((3, 3)) + 3 * np.eye(3), rng.standard_normal((3, 2))
    Q, P = np.eye(3) * 0.2, np.cov(rng.standard_normal((3, 10)))
    m = SystemModel(A, B, np.eye(3), Q, np.eye(3), np.eye(3))
    x, u = rng.standard_normal(3), rng.standard_normal(2)
    p = obs.kf_predict(obs.LinearObserverState(x, P), m, u)
    xr, Pr = loop_predict(x, P, A, B, Q, u)
    np.testing.assert_allclose(p.xhat, xr, rtol=1e-12)
    np.testing.assert_allclose(p.P, Pr, rtol=1e-12)
    q = obs.qobs_predict(obs.qobs_init(m, x, P), m, u)
    np.testing.assert_allclose(q.xhat, xr, rtol=1e-12)


def test_update_scalar_hand_case():
    m = model_1d()
    s = obs.kf_update(obs.LinearObserverState(np.array([1.0]), np.array([[1.0]])), m, np.array([3.0]))
    assert obs.kalman_gain(np.array([[1.0]]), m)[0, 0] == pytest.approx(0.5)
    assert s.xhat[0] == pytest.approx(2.0)
    assert s.P[0, 0] == pytest.approx(0.5)


def test_update_limits():
    rng = np.random.default_rng(1)
    x, y = rng.standard_normal(3), rng.standard_normal(3)
    s = obs.LinearObserverState(x, np.eye(3))
    blind = SystemModel(np.eye(3), np.zeros((3, 1)), np.eye(3), np.zeros((3, 3)), 1e12 * np.eye(3), np.eye(3))
    assert np.linalg.norm(obs.kf_update(s, blind, y).xhat - x) <= 1e-6 * np.linalg.norm(x)
    sharp = SystemModel(np.eye(3), np.zeros((3, 1)), np.eye(3), np.zeros((3, 3)), 1e-12 * np.eye(3), np.eye(3))
    np.testing.assert_allclose(obs.kf_update(s, sharp, y).xhat, y, atol=1e-4)


def test_update_rejects_bad_shapes():
    m = model_1d()
    s = obs.LinearObserverState(np.array([1.0]), np.array([[1.0]]))
    with pytest.raises(ValueError):
        obs.kf_update(s, m, np.array([1.0, 2.0]))
    with pytest.raises(NumericError):
        obs.kalman_gain(np.array([[-2.0]]), model_1d(R=1.0))


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**31))
def test_update_keeps_covariance_psd_and_no_larger(seed):
    rng = np.random.default_rng(seed)
    n, p = 4, 2
    C = rng.standard_normal((p, n))
    M = rng.standard_normal((n, n))
    P = M @ M.T + 1e-3 * np.eye(n)
    m = SystemModel(np.eye(n), np.zeros((n, 1)), C, np.zeros((n, n)), 0.1 * np.eye(p), np.eye(n))
    s = obs.kf_update(obs.LinearObserverState(np.zeros(n), P), m, rng.standard_normal(p))
    np.testing.assert_allclose(s.P, s.P.T)
    assert np.linalg.eigvalsh(s.P).min() > -1e-9
    assert np.linalg.eigvalsh(P - s.P).min() > -1e-9 * np.abs(P).max()


def test_condition_covariance_jitter():
    P = obs.condition_covariance(np.array([[1.0, 0.0], [1e-3, 0.0]]))
    np.testing.assert_array_equal(P, P.T)
    np.testing.assert_allclose(np.diag(P), [1.0 + 1e-10, 1e-10], rtol=1e-12)
    healthy = np.diag([2.0, 3.0])
    np.testing.assert_array_equal(obs.condition_covariance(healthy), healthy)


# --- quadratic observer ----------------------------------------------------------

def test_jacobian_examples():
    m = SystemModel(np.eye(2), np.zeros((2, 1)), np.eye(2), np.zeros((2, 2)), np.eye(2), np.eye(2))
    np.testing.assert_array_equal(obs.qobs_jacobian(m, np.zeros(2)), np.zeros(2))
    np.testing.assert_allclose(obs.qobs_jacobian(m, [1.0, 2.0]), [2.0, 4.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**31))
def test_jacobian_finite_difference(seed):
    rng = np.random.default_rng(seed)
    n = 5
    M = rng.standard_normal((n, n))
    V = M @ M.T + 0.1 * np.eye(n)
    m = SystemModel(np.eye(n), np.zeros((n, 1)), np.eye(n), np.zeros((n, n)), np.eye(n), V)
    x, h = rng.standard_normal(n), 1e-5
    fd = np.array([((x + h * e) @ V @ (x + h * e) - (x - h * e) @ V @ (x - h * e)) / (2 * h)
                   for e in np.eye(n)])
    J = obs.qobs_jacobian(m, x)
    assert np.linalg.norm(J - fd) <= 1e-5 * np.linalg.norm(J)


def test_ekf_hand_case():
    m = model_1d()
    s = obs.qobs_init(m, [1.0], [[1.0]])
    xt, P, H = obs.qobs_ekf_correct(s, m, 4.0, eta=1.0)
    assert H[0] == pytest.approx(2.0)
    assert xt[0] == pytest.approx(2.2)
    assert P[0, 0] == pytest.approx(0.2)


def test_ekf_zero_innovation_and_origin():
    m = rotation_model()
    x = np.array([0.4, -0.3])
    s = obs.qobs_init(m, x, np.eye(2))
    xt, _, _ = obs.qobs_ekf_correct(s, m, float(x @ m.V @ x), 1e-6)
    np.testing.assert_array_equal(xt, x)
    s0 = obs.qobs_init(m, np.zeros(2), 0.5 * np.eye(2))
    xt, P, H = obs.qobs_ekf_correct(s0, m, 3.0, 1e-6)
    np.testing.assert_array_equal(H, 0.0)
    np.testing.assert_array_equal(xt, 0.0)
    np.testing.assert_allclose(P, 0.5 * np.eye(2))
    with pytest.raises(ValueError):
        obs.qobs_ekf_correct(s0, m, 3.0, 0.0)


def test_config_validation():
    for bad in (dict(eta=0.0), dict(zeta=-1.0), dict(N=-1), dict(L=0.0)):
        with pytest.raises(ValueError):
            obs.QuadObserverConfig(**bad)
    cfg = obs.QuadObserverConfig.for_noise(rotation_model(), 0.005)
    assert cfg.L == pytest.approx(2.0)
    assert cfg.eta == pytest.approx(2.5e-5)
    assert cfg.zeta == pytest.approx(0.015 + 1e-9)


def test_scalar_fixed_point_from_truth():
    m = model_1d(A=0.9, V=2.0)
    cfg = obs.QuadObserverConfig.for_model(m, N=3)
    x = np.array([1.3])
    s = obs.qobs_init(m, x, [[0.01]], float(x @ m.V @ x))
    for _ in range(15):
        x = m.A @ x
        s = obs.qobs_step(s, m, cfg, np.zeros(1), float(x @ m.V @ x))
        assert not s.projected and s.flag is None
        np.testing.assert_allclose(s.xhat, x, atol=1e-12)


def test_feasible_xtilde_returned_exactly():
    m = rotation_model()
    cfg = obs.QuadObserverConfig.for_model(m, N=0, zeta=10.0)
    s = obs.qobs_init(m, [1.0, 0.0], 0.01 * np.eye(2), 1.0)
    s = obs.qobs_step(s, m, cfg, np.zeros(1), 1.7)
    assert not s.projected
    np.testing.assert_array_equal(s.xhat, s.xtilde)


def test_history_is_bounded_and_newest_first():
    m = rotation_model()
    cfg = obs.QuadObserverConfig.for_model(m, N=2)
    x = np.array([1.0, 0.5])
    s = obs.qobs_init(m, x, 0.01 * np.eye(2), float(x @ m.V @ x))
    for k in range(6):
        x = m.A @ x
        s = obs.qobs_step(s, m, cfg, np.zeros(1), float(x @ m.V @ x))
        assert len(s.history) == min(k + 2, 3)
        assert len(s.inputs) <= 2
        assert len(s.feasible_set) == min(k + 2, 3)
        np.testing.assert_array_equal(s.history[0].anchor, s.xhat)
    assert s.k == 6


def rotation_runs(n_seeds=50):
    """Perturbed-start rotation runs; counts projection events where the
    weighted error grew."""
    m = rotation_model()
    events = bad = 0
    for seed in range(n_seeds):
        rng = RngStream(seed).generator
        for N in (0, 1, 3):
            cfg = obs.QuadObserverConfig.for_model(m, zeta=0.0, N=N)
            x = np.array([1.0, 0.5])
            d = rng.standard_normal(2)
            s = obs.qobs_init(m, x + 0.1 * d / np.linalg.norm(d), 0.01 * np.eye(2),
                              float(x @ m.V @ x))
            for _ in range(20):
                x = m.A @ x
                s = obs.qobs_step(s, m, cfg, np.zeros(1), float(x @ m.V @ x))
                assert s.feasible_set.max_violation(x) <= 1e-9
                if s.projected and s.flag is None:
                    events += 1
                    bad += weighted_sq_norm(x - s.xhat, s.P) > weighted_sq_norm(x - s.xtilde, s.P) + 1e-9
    return events, bad


@pytest.mark.xfail(strict=True, reason="the constraint set is nonconvex; a few projection "
                   "events increase the weighted error (see notes ledger)")
def test_rotation_projection_never_increases_weighted_error():
    events, bad = rotation_runs()
    assert events > 100
    assert bad == 0
