import math  # noqa: INP001

import numpy as np
import pytest
import scipy.linalg
from scipy.integrate import quad_vec, solve_ivp
from scipy.stats import multivariate_normal, norm

from sequential_lfm.errors import InvalidInputError, NoStationarySolutionError, NumericalFailureError
from sequential_lfm.matrixnum import (
    Gaussian,
    discretize,
    gaussian_logpdf,
    is_hurwitz,
    jittered_cholesky,
    mat_exp,
    sampling_factor,
    solve_stationary,
)
from sequential_lfm.priors import MaternSpec, matern_ssm

MATERN32_F = np.array([[0.0, 1.0], [-3.0, -2.0 * math.sqrt(3.0)]])
MATERN32_L = np.array([[0.0], [1.0]])


def test_mat_exp_of_zero_is_identity() -> None:
    np.testing.assert_array_equal(mat_exp(np.zeros((3, 3))), np.eye(3))


def test_mat_exp_of_diagonal() -> None:
    expected = np.diag([math.e, math.exp(-2.0)])
    np.testing.assert_allclose(mat_exp(np.diag([1.0, -2.0])), expected, rtol=1e-13, atol=1e-15)


def test_mat_exp_of_nilpotent() -> None:
    np.testing.assert_allclose(mat_exp(np.array([[0.0, 1.0], [0.0, 0.0]])), [[1.0, 1.0], [0.0, 1.0]], atol=1e-14)


@pytest.mark.parametrize("bad", [np.zeros((2, 3)), np.array([[np.nan]]), np.array([[np.inf, 0.0], [0.0, 1.0]])])
def test_mat_exp_rejects_invalid_input(bad: np.ndarray) -> None:
    with pytest.raises(InvalidInputError):
        mat_exp(bad)


def test_discretize_ou_closed_form() -> None:
    lam, q, dt = 0.7, 1.3, 0.4
    trans = discretize(np.array([[-lam]]), np.array([[1.0]]), np.array([q]), dt)

    assert trans.A[0, 0] == pytest.approx(math.exp(-lam * dt), rel=1e-13)
    assert trans.Q[0, 0] == pytest.approx(q / (2.0 * lam) * (1.0 - math.exp(-2.0 * lam * dt)), rel=1e-12)


def test_discretize_zero_noise_gives_zero_q() -> None:
    trans = discretize(MATERN32_F, MATERN32_L, np.array([[0.0]]), 0.5)
    np.testing.assert_allclose(trans.Q, 0.0, atol=1e-15)


def test_discretize_matches_quadrature() -> None:
    q, dt = 2.5, 0.8
    trans = discretize(MATERN32_F, MATERN32_L, np.array([[q]]), dt)

    def integrand(s: float) -> np.ndarray:
        Phi = scipy.linalg.expm(MATERN32_F * s)
        return Phi @ MATERN32_L * q @ MATERN32_L.T @ Phi.T

    expected, _ = quad_vec(integrand, 0.0, dt, epsabs=1e-13, epsrel=1e-13)
    np.testing.assert_allclose(trans.Q, expected, atol=1e-10)
    np.testing.assert_allclose(trans.A, scipy.linalg.expm(MATERN32_F * dt), atol=1e-13)
    np.testing.assert_array_equal(trans.Q, trans.Q.T)


@pytest.mark.parametrize("dt", [0.0, -1.0, math.nan])
def test_discretize_rejects_non_positive_step(dt: float) -> None:
    with pytest.raises(InvalidInputError, match="Time step"):
        discretize(MATERN32_F, MATERN32_L, np.array([1.0]), dt)


def test_discretize_rejects_negative_spectral_density() -> None:
    with pytest.raises(InvalidInputError, match="non-negative"):
        discretize(MATERN32_F, MATERN32_L, np.array([-1.0]), 0.1)


def test_solve_stationary_ou() -> None:
    lam, q = 0.5, 3.0
    P = solve_stationary(np.array([[-lam]]), np.array([[1.0]]), q)
    assert P[0, 0] == pytest.approx(q / (2.0 * lam), rel=1e-12)


def test_solve_stationary_satisfies_lyapunov() -> None:
    q = 4.0 * 3.0 * math.sqrt(3.0)
    P = solve_stationary(MATERN32_F, MATERN32_L, q)
    residual = MATERN32_F @ P + P @ MATERN32_F.T + q * MATERN32_L @ MATERN32_L.T
    np.testing.assert_allclose(residual, 0.0, atol=1e-10)
    assert P[0, 0] == pytest.approx(1.0, rel=1e-10)


def test_solve_stationary_rejects_unstable_dynamics() -> None:
    with pytest.raises(NoStationarySolutionError):
        solve_stationary(np.array([[0.1]]), np.array([[1.0]]), 1.0)


def test_is_hurwitz() -> None:
    assert is_hurwitz(MATERN32_F)
    assert not is_hurwitz(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_gaussian_logpdf_scalar() -> None:
    assert gaussian_logpdf(np.array([1.2]), np.array([0.2]), np.array([[4.0]])) == pytest.approx(
        norm.logpdf(1.2, loc=0.2, scale=2.0), rel=1e-12
    )


def test_gaussian_logpdf_matches_scipy() -> None:
    S = np.array([[2.0, 0.3, 0.1], [0.3, 1.0, -0.2], [0.1, -0.2, 0.5]])
    y = np.array([0.1, -0.4, 0.9])
    m = np.array([0.0, 0.2, 0.3])
    assert gaussian_logpdf(y, m, S) == pytest.approx(multivariate_normal(m, S).logpdf(y), rel=1e-12)


def test_gaussian_logpdf_of_zero_covariance_fails() -> None:
    with pytest.raises(NumericalFailureError):
        gaussian_logpdf(np.array([1.0]), np.array([0.0]), np.array([[0.0]]))


def test_jittered_cholesky_recovers_singular_psd() -> None:
    P = np.array([[1.0, 1.0], [1.0, 1.0]])
    C = jittered_cholesky(P)
    np.testing.assert_allclose(C @ C.T, P, atol=1e-9)


def test_jittered_cholesky_rejects_indefinite() -> None:
    with pytest.raises(NumericalFailureError, match="after jitter"):
        jittered_cholesky(np.array([[2.0, 0.0], [0.0, -1.0]]))


def test_sampling_factor_of_zero_matrix() -> None:
    np.testing.assert_array_equal(sampling_factor(np.zeros((2, 2))), np.zeros((2, 2)))


def test_gaussian_validity_and_marginal() -> None:
    state = Gaussian(np.array([1.0, 2.0, 3.0]), np.diag([1.0, 2.0, 3.0]))
    assert state.is_valid()
    assert not Gaussian(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]])).is_valid()

    marginal = state.marginal(slice(1, 3))
    np.testing.assert_array_equal(marginal.mean, [2.0, 3.0])
    np.testing.assert_array_equal(marginal.cov, np.diag([2.0, 3.0]))


def test_mat_exp_of_skew_symmetric_is_orthogonal() -> None:
    rng = np.random.default_rng(4)
    W = rng.normal(size=(4, 4))
    R = mat_exp(W - W.T)

    np.testing.assert_allclose(R @ R.T, np.eye(4), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_mat_exp_semigroup() -> None:
    rng = np.random.default_rng(5)
    M = rng.normal(size=(3, 3))
    np.testing.assert_allclose(mat_exp(M * 0.7), mat_exp(M * 0.3) @ mat_exp(M * 0.4), rtol=1e-12, atol=1e-13)


def test_discretize_matches_ode_solution() -> None:
    q, dt = 1.7, 2.5

    def moments(_: float, z: np.ndarray) -> np.ndarray:
        A, Q = z[:4].reshape(2, 2), z[4:].reshape(2, 2)
        dQ = MATERN32_F @ Q + Q @ MATERN32_F.T + q * MATERN32_L @ MATERN32_L.T
        return np.concatenate([(MATERN32_F @ A).ravel(), dQ.ravel()])

    start = np.concatenate([np.eye(2).ravel(), np.zeros(4)])
    solution = solve_ivp(moments, (0.0, dt), start, method="DOP853", rtol=1e-12, atol=1e-14)
    trans = discretize(MATERN32_F, MATERN32_L, np.array([q]), dt)

    np.testing.assert_allclose(trans.A, solution.y[:4, -1].reshape(2, 2), atol=1e-9)
    np.testing.assert_allclose(trans.Q, solution.y[4:, -1].reshape(2, 2), atol=1e-9)


@pytest.mark.parametrize("nu", [1.5, 2.5])
@pytest.mark.parametrize("dt", [10.0, 15.0, 50.0, 1e4])
def test_long_steps_approach_the_stationary_covariance(nu: float, dt: float) -> None:
    prior = matern_ssm(MaternSpec(nu=nu, lengthscale=1.0))
    trans = discretize(prior.F, prior.L, np.array([prior.q]), dt)

    np.testing.assert_allclose(trans.Q, prior.P0 - trans.A @ prior.P0 @ trans.A.T, atol=1e-9)
    if dt >= 50.0:
        np.testing.assert_allclose(trans.A, 0.0, atol=1e-12)
        np.testing.assert_allclose(trans.Q, prior.P0, atol=1e-9)
    assert np.linalg.eigvalsh(trans.Q).min() > 0.0


def test_long_step_without_stable_dynamics_keeps_growing() -> None:
    F = np.array([[0.0, 1.0], [0.0, 0.0]])
    trans = discretize(F, MATERN32_L, np.array([1.0]), 40.0)

    np.testing.assert_allclose(trans.A, [[1.0, 40.0], [0.0, 1.0]], atol=1e-9)
    np.testing.assert_allclose(trans.Q, [[40.0**3 / 3.0, 40.0**2 / 2.0], [40.0**2 / 2.0, 40.0]], rtol=1e-10)
