"""
Exact sequential inference for linear Gauss-Markov models.

The filter walks the time grid alternating an exactly discretized prediction with a Joseph-form update; the
Rauch-Tung-Striebel smoother reuses the transitions stored by the filter, so a grid containing reset steps is
smoothed without any special handling.
"""

import logging
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from sequential_lfm.errors import InvalidInputError
from sequential_lfm.lfm import ContinuousModel, MeasurementModel
from sequential_lfm.matrixnum import (
    DiscreteTransition,
    Gaussian,
    discretize,
    jittered_cholesky,
    logpdf_from_cholesky,
    symmetrize,
)
from sequential_lfm.types import FloatArray


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Observation times with one (possibly partly missing) observation vector per time."""

    times: FloatArray
    """Strictly increasing times ``t_1 < ... < t_T``."""

    observations: FloatArray
    """``T x m`` observations; NaN marks a missing entry."""

    t0: float | None = None
    """Time at which the model prior holds; defaults to ``times[0]``."""

    def __post_init__(self) -> None:
        """Validate ordering and shapes, then fill in the prior time."""
        times = np.asarray(self.times, dtype=float).reshape(-1)
        observations = np.asarray(self.observations, dtype=float)
        if observations.ndim == 1:
            observations = observations.reshape(-1, 1)

        if times.shape[0] == 0:
            error_message = "A time grid needs at least one time"
            raise InvalidInputError(error_message)
        if not np.all(np.isfinite(times)):
            error_message = "Grid times must be finite"
            raise InvalidInputError(error_message)
        if np.any(np.diff(times) <= 0.0):
            error_message = "Grid times must be strictly increasing"
            raise InvalidInputError(error_message)
        if observations.shape[0] != times.shape[0]:
            error_message = f"Got {observations.shape[0]} observation rows for {times.shape[0]} times"
            raise InvalidInputError(error_message)
        if np.any(np.isinf(observations)):
            error_message = "Observations must be finite or NaN (missing)"
            raise InvalidInputError(error_message)

        t0 = float(times[0]) if self.t0 is None else float(self.t0)
        if t0 > times[0]:
            error_message = f"Prior time {t0} lies after the first grid time {times[0]}"
            raise InvalidInputError(error_message)

        object.__setattr__(self, "times", times)
        object.__setattr__(self, "observations", observations)
        object.__setattr__(self, "t0", t0)

    @property
    def prior_time(self) -> float:
        """Time of the model prior."""
        return float(self.t0) if self.t0 is not None else float(self.times[0])

    @property
    def size(self) -> int:
        """Return the number of grid times ``T``."""
        return int(self.times.shape[0])

    @property
    def n_observations(self) -> int:
        """Return the observation dimension ``m``."""
        return int(self.observations.shape[1])

    @classmethod
    def unobserved(
        cls,
        times: Sequence[float] | FloatArray,
        n_observations: int,
        t0: float | None = None,
    ) -> "TimeGrid":
        """A grid whose observations are all missing."""
        times = np.asarray(times, dtype=float)
        return cls(times, np.full((times.shape[0], n_observations), np.nan), t0)

    def insert(self, t_star: float) -> tuple["TimeGrid", int]:
        """
        Add a time with a fully missing observation.

        :returns: The expanded grid and the index of ``t_star`` in it; an existing time is not duplicated
        :raises InvalidInputError: If ``t_star`` precedes the prior time
        """
        if t_star < self.prior_time:
            error_message = f"Time {t_star} precedes the prior time {self.prior_time}"
            raise InvalidInputError(error_message)

        index = int(np.searchsorted(self.times, t_star))
        if index < self.size and self.times[index] == t_star:
            return self, index

        times = np.insert(self.times, index, t_star)
        observations = np.insert(self.observations, index, np.nan, axis=0)
        return TimeGrid(times, observations, self.prior_time), index


@dataclass(frozen=True, eq=False)
class FilterResult:
    """Per-step predicted and filtered Gaussians with the log-likelihood decomposition."""

    times: FloatArray
    t0: float
    predicted: list[Gaussian]
    filtered: list[Gaussian]
    loglik_increments: FloatArray
    transitions: list[DiscreteTransition | None]
    """Transition arriving at each step; ``None`` when the step coincides with the previous time."""

    @property
    def loglik(self) -> float:
        """Total log marginal likelihood of the observations."""
        return float(np.sum(self.loglik_increments))

    @property
    def means(self) -> FloatArray:
        """Filtered means stacked as ``T x n``."""
        return np.stack([state.mean for state in self.filtered])

    @property
    def covs(self) -> FloatArray:
        """Filtered covariances stacked as ``T x n x n``."""
        return np.stack([state.cov for state in self.filtered])


@dataclass(frozen=True, eq=False)
class SmootherResult:
    """Per-step smoothed Gaussians."""

    times: FloatArray
    smoothed: list[Gaussian]

    @property
    def means(self) -> FloatArray:
        """Smoothed means stacked as ``T x n``."""
        return np.stack([state.mean for state in self.smoothed])

    @property
    def covs(self) -> FloatArray:
        """Smoothed covariances stacked as ``T x n x n``."""
        return np.stack([state.cov for state in self.smoothed])


@dataclass(frozen=True, eq=False)
class SwitchSchedule:
    """Known force switch times and the force prior each new segment is re-primed with."""

    times: FloatArray
    reset_covs: tuple[FloatArray | None, ...] = ()
    """Optional per-switch force covariance; a missing entry or ``None`` uses the stationary covariance."""

    def __post_init__(self) -> None:
        """Validate that switch times are strictly increasing."""
        times = np.asarray(self.times, dtype=float).reshape(-1)
        if np.any(np.diff(times) <= 0.0):
            error_message = "Switch times must be strictly increasing"
            raise InvalidInputError(error_message)
        if len(self.reset_covs) > times.shape[0]:
            error_message = f"Got {len(self.reset_covs)} reset covariances for {times.shape[0]} switches"
            raise InvalidInputError(error_message)
        object.__setattr__(self, "times", times)

    def reset_cov(self, q: int, model: ContinuousModel) -> FloatArray:
        """Force covariance that re-primes segment ``q``."""
        if q < len(self.reset_covs) and self.reset_covs[q] is not None:
            cov = np.asarray(self.reset_covs[q], dtype=float)
            size = model.dim - model.layout.n_output_states
            if cov.shape != (size, size):
                error_message = f"Reset covariance {q} must be {size}x{size}, got {cov.shape}"
                raise InvalidInputError(error_message)
            return cov
        return model.stationary_force_cov


@dataclass
class TransitionCache:
    """Memoized ``dt -> (A, Q)`` for one continuous model, keyed on ``dt`` rounded to 13 significant digits."""

    factory: Callable[[float], DiscreteTransition]
    _entries: dict[str, DiscreteTransition] = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: ContinuousModel) -> "TransitionCache":
        """Cache of the exact discretization of ``model``."""
        return cls(model.transition)

    def __call__(self, dt: float) -> DiscreteTransition:
        """Return the transition over ``dt``, computing it on first use."""
        key = f"{dt:.13g}"
        entry = self._entries.get(key)
        if entry is None:
            logging.debug("Transition cache miss for dt=%s", key)
            entry = self.factory(dt)
            self._entries[key] = entry
        return entry

    def __len__(self) -> int:
        """Return the number of cached step lengths."""
        return len(self._entries)


def reset_transition(model: ContinuousModel, dt: float, reset_cov: FloatArray | None = None) -> DiscreteTransition:
    """
    Transition across a force switch point.

    The output block evolves by its own dynamics ``(A_x, Q_x)``, driven over the step by white noise whose
    spectral density is the reset force variance times ``dt``; the force block is zeroed and re-primed with
    ``reset_cov`` so ``A = blkdiag(A_x, 0)`` and ``Q = blkdiag(Q_x, reset_cov)``.

    :param model: Augmented model
    :param dt: Step length, must be positive
    :param reset_cov: Force covariance of the new segment; defaults to the stationary force covariance
    """
    nx = model.layout.n_output_states
    force_cov = model.stationary_force_cov if reset_cov is None else np.asarray(reset_cov, dtype=float)

    force_variances = np.array([force_cov[block, block][0, 0] for block in _local_blocks(model)])
    output = discretize(model.output_F, model.input_matrix, force_variances * dt, dt)

    A = np.zeros((model.dim, model.dim))
    Q = np.zeros((model.dim, model.dim))
    A[:nx, :nx] = output.A
    Q[:nx, :nx] = output.Q
    Q[nx:, nx:] = force_cov
    return DiscreteTransition(A=A, Q=symmetrize(Q))


def _local_blocks(model: ContinuousModel) -> list[slice]:
    nx = model.layout.n_output_states
    return [slice(block.start - nx, block.stop - nx) for block in model.layout.force_blocks]


def kf_predict(state: Gaussian, trans: DiscreteTransition) -> Gaussian:
    """
    Propagate a Gaussian through ``x' = A x + q``, ``q ~ N(0, Q)``.

    :raises InvalidInputError: If the transition does not match the state dimension
    """
    n = state.dim
    if trans.A.shape != (n, n) or trans.Q.shape != (n, n):
        error_message = f"Transition of shape {trans.A.shape} does not match state dimension {n}"
        raise InvalidInputError(error_message)
    return Gaussian(trans.A @ state.mean, symmetrize(trans.A @ state.cov @ trans.A.T + trans.Q))


def kf_update(state: Gaussian, y: FloatArray, meas: MeasurementModel) -> tuple[Gaussian, float]:
    """
    Condition a Gaussian on an observation, dropping missing (NaN) entries.

    The covariance is updated in Joseph form ``(I - K H) P (I - K H)^T + K R K^T``.

    :returns: The posterior and the log-likelihood increment ``log N(y; H m, H P H^T + R)``
    :raises NumericalFailureError: If the innovation covariance is not positive-definite after jitter
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape[0] != meas.n_observations:
        error_message = f"Observation has {y.shape[0]} entries, the measurement model expects {meas.n_observations}"
        raise InvalidInputError(error_message)

    observed = ~np.isnan(y)
    if not np.any(observed):
        return state, 0.0

    H, R = meas.masked(observed)
    residual = y[observed] - H @ state.mean
    PHt = state.cov @ H.T
    S = H @ PHt + R
    chol = jittered_cholesky(S, "innovation covariance")

    K = scipy.linalg.cho_solve((chol, True), PHt.T).T
    I_KH = np.eye(state.dim) - K @ H
    cov = symmetrize(I_KH @ state.cov @ I_KH.T + K @ R @ K.T)

    return Gaussian(state.mean + K @ residual, cov), logpdf_from_cholesky(residual, chol)


def _run_filter(
    model: ContinuousModel,
    meas: MeasurementModel,
    grid: TimeGrid,
    resets: Mapping[int, FloatArray] | None = None,
) -> FilterResult:
    if grid.n_observations != meas.n_observations:
        error_message = f"Grid has {grid.n_observations} observation columns, model expects {meas.n_observations}"
        raise InvalidInputError(error_message)
    if meas.H.shape[1] != model.dim:
        error_message = f"Measurement model acts on {meas.H.shape[1]} states, model has {model.dim}"
        raise InvalidInputError(error_message)

    resets = resets or {}
    cache = TransitionCache.for_model(model)
    state = model.prior
    previous = grid.prior_time

    predicted: list[Gaussian] = []
    filtered: list[Gaussian] = []
    transitions: list[DiscreteTransition | None] = []
    increments = np.zeros(grid.size)

    for k, t in enumerate(grid.times):
        dt = float(t - previous)
        trans: DiscreteTransition | None = None
        if k in resets:
            trans = reset_transition(model, dt, resets[k])
        elif dt > 0.0:
            trans = cache(dt)

        if trans is not None:
            state = kf_predict(state, trans)
        predicted.append(state)
        transitions.append(trans)

        state, increments[k] = kf_update(state, grid.observations[k], meas)
        filtered.append(state)
        previous = float(t)

    logging.debug("Filtered %i steps with %i distinct step lengths", grid.size, len(cache))
    return FilterResult(
        times=grid.times,
        t0=grid.prior_time,
        predicted=predicted,
        filtered=filtered,
        loglik_increments=increments,
        transitions=transitions,
    )


def kalman_filter(model: ContinuousModel, meas: MeasurementModel, grid: TimeGrid) -> FilterResult:
    """
    Run the Kalman filter over ``grid`` starting from the model prior at ``grid.t0``.

    Transitions are discretized once per distinct step length.
    """
    return _run_filter(model, meas, grid)


def rts_backward_step(
    filtered: Gaussian,
    predicted_next: Gaussian,
    smoothed_next: Gaussian,
    trans: DiscreteTransition,
) -> Gaussian:
    """
    One Rauch-Tung-Striebel step with gain ``G = P A^T (P_pred)^-1``.

    :raises NumericalFailureError: If the predicted covariance is singular after jitter
    """
    chol = jittered_cholesky(predicted_next.cov, "predicted covariance")
    G = scipy.linalg.cho_solve((chol, True), trans.A @ filtered.cov).T
    mean = filtered.mean + G @ (smoothed_next.mean - predicted_next.mean)
    cov = symmetrize(filtered.cov + G @ (smoothed_next.cov - predicted_next.cov) @ G.T)
    return Gaussian(mean, cov)


def rts_smoother(model: ContinuousModel, filt: FilterResult, grid: TimeGrid) -> SmootherResult:  # noqa: ARG001
    """
    Rauch-Tung-Striebel smoother over the transitions stored by the filter.

    :param model: Model the filter ran on; kept for signature symmetry with the filter
    :param filt: Filter output on ``grid``
    :param grid: Grid of the filter run
    """
    if filt.times.shape != grid.times.shape or not np.array_equal(filt.times, grid.times):
        error_message = "Filter result was not produced on this grid"
        raise InvalidInputError(error_message)

    smoothed = list(filt.filtered)
    for k in range(grid.size - 2, -1, -1):
        trans = filt.transitions[k + 1]
        if trans is None:
            smoothed[k] = smoothed[k + 1]
            continue
        smoothed[k] = rts_backward_step(filt.filtered[k], filt.predicted[k + 1], smoothed[k + 1], trans)

    return SmootherResult(times=grid.times, smoothed=smoothed)


def predict_at(model: ContinuousModel, meas: MeasurementModel, grid: TimeGrid, t_star: float) -> Gaussian:
    """
    Smoothed marginal at an arbitrary time, found by inserting ``t_star`` into the grid without an observation.

    :raises InvalidInputError: If ``t_star`` precedes the prior time
    """
    expanded, index = grid.insert(t_star)
    filt = kalman_filter(model, meas, expanded)
    return rts_smoother(model, filt, expanded).smoothed[index]


def predict_at_two_sided(
    model: ContinuousModel,
    filt: FilterResult,
    smooth: SmootherResult,
    t_star: float,
) -> Gaussian:
    """
    Smoothed marginal at ``t_star`` from an existing filter/smoother run.

    Predicts from the last filtered state before ``t_star`` and corrects with one smoother step from the first
    smoothed state after it. Only valid for runs without reset transitions.
    """
    if t_star < filt.t0:
        error_message = f"Time {t_star} precedes the prior time {filt.t0}"
        raise InvalidInputError(error_message)

    times = filt.times
    after = int(np.searchsorted(times, t_star))
    if after < times.shape[0] and times[after] == t_star:
        return smooth.smoothed[after]

    if after == 0:
        base, base_time = model.prior, filt.t0
    else:
        base, base_time = filt.filtered[after - 1], float(times[after - 1])

    state = base
    if t_star > base_time:
        state = kf_predict(base, model.transition(t_star - base_time))
    if after == times.shape[0]:
        return state

    trans = model.transition(float(times[after]) - t_star)
    predicted_next = kf_predict(state, trans)
    return rts_backward_step(state, predicted_next, smooth.smoothed[after], trans)


def known_switch_filter(
    model: ContinuousModel,
    meas: MeasurementModel,
    grid: TimeGrid,
    schedule: SwitchSchedule,
) -> tuple[FilterResult, SmootherResult]:
    """
    Filter and smooth with the force re-primed at known switch times.

    Switch times are inserted into the grid; the step arriving at each one uses :func:`reset_transition`.

    :raises InvalidInputError: If a switch time lies outside ``(times[0], times[-1]]``
    """
    if schedule.times.shape[0] and (schedule.times[0] <= grid.times[0] or schedule.times[-1] > grid.times[-1]):
        error_message = (
            f"Switch times must lie in ({grid.times[0]}, {grid.times[-1]}], got "
            f"[{schedule.times[0]}, {schedule.times[-1]}]"
        )
        raise InvalidInputError(error_message)

    expanded = grid
    for t_q in schedule.times:
        expanded, _ = expanded.insert(float(t_q))

    resets = {
        int(np.searchsorted(expanded.times, t_q)): schedule.reset_cov(q, model) for q, t_q in enumerate(schedule.times)
    }
    logging.info("Filtering with %i known switch points", len(resets))

    filt = _run_filter(model, meas, expanded, resets)
    return filt, rts_smoother(model, filt, expanded)
