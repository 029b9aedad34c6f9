import math  # noqa: INP001

import numpy as np
import pytest
import scipy.linalg
from scipy.integrate import solve_ivp

from sequential_lfm.errors import InvalidInputError
from sequential_lfm.lfm import (
    ContinuousModel,
    MeasurementModel,
    OutputModelSpec,
    augment,
    build_lfm,
    build_output_ssm,
    initial_state,
    observe_outputs,
    prior_model,
)
from sequential_lfm.matrixnum import discretize
from sequential_lfm.priors import MaternSpec, PriorSSM, matern_ssm


@pytest.fixture
def two_output_spec() -> OutputModelSpec:
    return OutputModelSpec(
        masses=[2.0, 0.5],
        dampings=[3.0, 1.0],
        springs=[4.0, 2.0],
        sensitivities=[[5.0, 0.0], [1.0, -1.0]],
    )


def test_build_output_ssm_blocks(two_output_spec: OutputModelSpec) -> None:
    F, L = build_output_ssm(two_output_spec)

    np.testing.assert_allclose(F[:2, :2], [[0.0, 1.0], [-2.0, -1.5]])
    np.testing.assert_allclose(F[2:, 2:], [[0.0, 1.0], [-4.0, -2.0]])
    np.testing.assert_array_equal(F[:2, 2:], 0.0)
    np.testing.assert_allclose(L, [[0.0, 0.0], [2.5, 0.0], [0.0, 0.0], [2.0, -2.0]])


def test_output_spec_rejects_zero_mass() -> None:
    with pytest.raises(ValueError, match="non-zero mass"):
        OutputModelSpec(masses=[0.0], dampings=[1.0], springs=[1.0], sensitivities=[[1.0]])


def test_build_output_ssm_rejects_zero_mass() -> None:
    spec = OutputModelSpec.model_construct(masses=[0.0], dampings=[1.0], springs=[1.0], sensitivities=[[1.0]])
    with pytest.raises(InvalidInputError, match="zero mass"):
        build_output_ssm(spec)


def test_output_spec_rejects_dimension_mismatch() -> None:
    with pytest.raises(ValueError, match="sensitivities"):
        OutputModelSpec(masses=[1.0, 1.0], dampings=[1.0, 1.0], springs=[1.0, 1.0], sensitivities=[[1.0]])


def test_augment_couples_force_into_output(two_output_spec: OutputModelSpec) -> None:
    priors = [matern_ssm(MaternSpec(nu=1.5, lengthscale=1.0)), matern_ssm(MaternSpec(nu=0.5, lengthscale=2.0))]
    model = build_lfm(two_output_spec, priors)

    assert model.dim == 4 + 2 + 1
    assert model.layout.names == ("x1", "dx1", "x2", "dx2", "u1", "u1_d1", "u2")
    assert model.layout.force_blocks == (slice(4, 6), slice(6, 7))

    # Force values enter the output derivatives; force derivatives do not.
    np.testing.assert_allclose(model.F[1, 4], 2.5)
    np.testing.assert_allclose(model.F[3, 4], 2.0)
    np.testing.assert_allclose(model.F[3, 6], -2.0)
    assert model.F[1, 5] == 0.0

    np.testing.assert_array_equal(model.F[4:6, 4:6], priors[0].F)
    np.testing.assert_array_equal(model.L[:, 0], [0, 0, 0, 0, 0, 1, 0])
    np.testing.assert_array_equal(model.L[:, 1], [0, 0, 0, 0, 0, 0, 1])
    np.testing.assert_allclose(model.Qc, np.diag([priors[0].q, priors[1].q]))


def test_augment_with_wiring_shares_one_force() -> None:
    prior = matern_ssm(MaternSpec(lengthscale=1.0))
    F = np.array([[0.0, 1.0], [-1.0, -1.0]])
    L = np.array([[0.0, 0.0], [1.0, 2.0]])

    model = augment(F, L, [prior], wiring=[0, 0])

    assert model.dim == 4
    np.testing.assert_allclose(model.F[1, 2], 3.0)


def test_augment_rejects_unknown_force() -> None:
    prior = matern_ssm(MaternSpec(lengthscale=1.0))
    with pytest.raises(InvalidInputError, match="unknown force"):
        augment(np.zeros((2, 2)), np.ones((2, 1)), [prior], wiring=[1])


def test_augment_rejects_prior_count_mismatch() -> None:
    prior = matern_ssm(MaternSpec(lengthscale=1.0))
    with pytest.raises(InvalidInputError, match="priors"):
        augment(np.zeros((2, 2)), np.ones((2, 2)), [prior])


def test_initial_state_is_block_diagonal(lfm_model: ContinuousModel) -> None:
    state = initial_state(lfm_model, 3.0 * np.eye(2))

    np.testing.assert_array_equal(state.mean, np.zeros(4))
    np.testing.assert_array_equal(state.cov[:2, :2], 3.0 * np.eye(2))
    np.testing.assert_array_equal(state.cov[:2, 2:], 0.0)
    np.testing.assert_allclose(state.cov[2:, 2:], lfm_model.priors[0].P0)
    assert state.is_valid()


def test_initial_state_rejects_wrong_shape(lfm_model: ContinuousModel) -> None:
    with pytest.raises(InvalidInputError, match="2x2"):
        initial_state(lfm_model, np.eye(3))


def test_initial_state_rejects_asymmetric(lfm_model: ContinuousModel) -> None:
    with pytest.raises(InvalidInputError, match="symmetric"):
        initial_state(lfm_model, np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_prior_model_has_only_force_block() -> None:
    prior = matern_ssm(MaternSpec(nu=2.5, lengthscale=1.0))
    model = prior_model(prior)

    assert model.layout.names == ("u1", "u1_d1", "u1_d2")
    np.testing.assert_array_equal(model.F, prior.F)
    np.testing.assert_allclose(model.prior.cov, prior.P0)


def test_measurement_from_slots(lfm_model: ContinuousModel) -> None:
    meas = MeasurementModel.from_slots(lfm_model.layout, ["x1", "u1"], [0.1, 0.2])

    np.testing.assert_array_equal(meas.H, [[1, 0, 0, 0], [0, 0, 1, 0]])
    np.testing.assert_array_equal(meas.R, np.diag([0.1, 0.2]))


def test_measurement_rejects_unknown_slot(lfm_model: ContinuousModel) -> None:
    with pytest.raises(InvalidInputError, match="Unknown state slot"):
        MeasurementModel.from_slots(lfm_model.layout, ["x2"], 0.1)


def test_measurement_rejects_negative_noise(lfm_model: ContinuousModel) -> None:
    with pytest.raises(InvalidInputError, match="non-negative"):
        MeasurementModel.from_slots(lfm_model.layout, ["x1"], -0.1)


def test_observe_outputs(two_output_spec: OutputModelSpec) -> None:
    priors = [matern_ssm(MaternSpec(lengthscale=1.0))] * 2
    model = build_lfm(two_output_spec, priors)
    meas = observe_outputs(model, 0.5)

    assert meas.n_observations == 2
    assert meas.H[0, model.layout.index("x1")] == 1.0
    assert meas.H[1, model.layout.index("x2")] == 1.0


def test_transition_is_exact_discretization(lfm_model: ContinuousModel) -> None:
    trans = lfm_model.transition(0.25)
    assert trans.A.shape == (4, 4)
    np.testing.assert_allclose(trans.Q, trans.Q.T)
    assert np.all(np.linalg.eigvalsh(trans.Q) > -1e-12)


def test_unit_oscillator_with_matern_force() -> None:
    spec = OutputModelSpec(masses=[1.0], dampings=[1.0], springs=[1.0], sensitivities=[[1.0]])
    model = build_lfm(spec, [matern_ssm(MaternSpec(nu=1.5, lengthscale=1.0))])
    root3 = math.sqrt(3.0)

    np.testing.assert_allclose(
        model.F,
        [[0.0, 1.0, 0.0, 0.0], [-1.0, -1.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0, 0.0, -3.0, -2.0 * root3]],
        rtol=1e-14,
    )
    np.testing.assert_array_equal(model.L, [[0.0], [0.0], [0.0], [1.0]])


def test_augment_without_forces_is_the_output_model() -> None:
    F = np.array([[0.0, 1.0], [-2.0, -0.5]])
    model = augment(F, np.zeros((2, 0)), [])

    assert model.dim == 2
    np.testing.assert_array_equal(model.F, F)
    assert model.L.shape == (2, 0)
    assert model.layout.names == ("x1", "dx1")
    np.testing.assert_allclose(model.transition(0.5).Q, 0.0, atol=1e-15)


def test_force_block_keeps_its_prior_dynamics(two_output_spec: OutputModelSpec) -> None:
    priors = [matern_ssm(MaternSpec(nu=2.5, lengthscale=1.5)), matern_ssm(MaternSpec(nu=0.5, lengthscale=0.7))]
    model = build_lfm(two_output_spec, priors)
    trans = model.transition(0.6)

    for prior, block in zip(priors, model.layout.force_blocks, strict=True):
        alone = discretize(prior.F, prior.L, np.array([prior.q]), 0.6)
        np.testing.assert_allclose(trans.A[block, block], alone.A, atol=1e-12)
        np.testing.assert_allclose(trans.Q[block, block], alone.Q, atol=1e-12)
        np.testing.assert_array_equal(trans.A[block, :4], 0.0)
        np.testing.assert_allclose(model.prior.cov[block, block], prior.P0)


def test_five_outputs_with_matern_force_layout() -> None:
    spec = OutputModelSpec(masses=[1.0] * 5, dampings=[1.0] * 5, springs=[1.0] * 5, sensitivities=[[1.0]] * 5)
    model = build_lfm(spec, [matern_ssm(MaternSpec(nu=1.5, lengthscale=1.0))])

    assert model.dim == 12
    assert model.layout.names[-2:] == ("u1", "u1_d1")
    assert [model.layout.index(f"x{d}") for d in range(1, 6)] == [0, 2, 4, 6, 8]


def test_two_outputs_driven_by_a_known_force_match_an_ode_solver() -> None:
    spec = OutputModelSpec(masses=[1.0, 2.0], dampings=[0.8, 1.5], springs=[2.0, 0.5], sensitivities=[[1.0], [-0.5]])
    omega = 1.3
    harmonic = PriorSSM(
        F=np.array([[0.0, 1.0], [-(omega**2), 0.0]]),
        L=np.array([[0.0], [1.0]]),
        q=0.0,
        P0=np.eye(2),
        coeffs=np.array([omega**2, 0.0]),
    )
    model = build_lfm(spec, [harmonic])
    times = np.linspace(0.0, 8.0, 41)

    # Force u(t) = sin(omega t) starts at (0, omega); the outputs start at rest.
    x = np.array([0.0, 0.0, 0.0, 0.0, 0.0, omega])
    positions = [x[[0, 2]]]
    for dt in np.diff(times):
        x = model.transition(float(dt)).A @ x
        positions.append(x[[0, 2]])

    masses, dampings, springs = np.array([1.0, 2.0]), np.array([0.8, 1.5]), np.array([2.0, 0.5])
    sensitivities = np.array([1.0, -0.5])

    def second_order(t: float, z: np.ndarray) -> np.ndarray:
        position, velocity = z[:2], z[2:]
        forcing = sensitivities * math.sin(omega * t)
        return np.concatenate([velocity, (forcing - dampings * velocity - springs * position) / masses])

    solution = solve_ivp(second_order, (0.0, 8.0), np.zeros(4), t_eval=times, method="DOP853", rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(np.array(positions), solution.y[:2].T, atol=1e-6)


def test_transition_matches_dense_exponential(lfm_model: ContinuousModel) -> None:
    np.testing.assert_allclose(lfm_model.transition(0.3).A, scipy.linalg.expm(lfm_model.F * 0.3), atol=1e-13)
