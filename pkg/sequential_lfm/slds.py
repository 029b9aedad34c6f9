"""
Switching latent force models.

A bank of ``L^R + 1`` linear models, one per assignment of candidate length-scales to forces plus a reset model
that re-primes the forces, is combined with a Markov switch prior. Inference is approximate: assumed density
filtering (ADF) forward, expectation correction (EC) backward, both keeping log-space Gaussian mixtures that are
collapsed per model by moment matching.
"""

import itertools
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import cast

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import logsumexp

from sequential_lfm.errors import InvalidInputError, NumericalFailureError
from sequential_lfm.kalman import TimeGrid, TransitionCache, kf_predict, kf_update, reset_transition, rts_backward_step
from sequential_lfm.lfm import ContinuousModel, MeasurementModel, OutputModelSpec, build_lfm
from sequential_lfm.matrixnum import DiscreteTransition, Gaussian, gaussian_logpdf, jittered_cholesky, symmetrize
from sequential_lfm.priors import MaternSpec, PriorSSM, matern_ssm
from sequential_lfm.types import FloatArray

DEFAULT_THRESHOLD = 0.2
"""Reset probability above which a time is reported as a switch point."""

PROBABILITY_TOLERANCE = 1e-9

PriorFactory = Callable[[float], PriorSSM]


class SwitchTransitionSpec(BaseModel):
    """Markov switch prior over the regular models and the reset model."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    stay: float | list[float] = Field(default=0.98)
    """Probability ``a_s`` of keeping regular model ``s``; the remainder ``1 - a_s`` enters the reset model."""

    exit: list[float] | None = None
    """Probabilities ``c_s`` of leaving the reset model into regular model ``s``; uniform when omitted."""

    @model_validator(mode="after")
    def validate_probabilities(self) -> "SwitchTransitionSpec":
        """
        Validate that every probability lies in ``[0, 1]`` and the exit probabilities sum to one.

        :raises ValueError: If a probability is out of range or ``sum(c) != 1``
        """
        stay = self.stay if isinstance(self.stay, list) else [self.stay]
        if any(not 0.0 <= a <= 1.0 for a in stay):
            error_message = "stay: probabilities must lie in [0, 1]"
            raise ValueError(error_message)

        if self.exit is not None:
            if any(not 0.0 <= c <= 1.0 for c in self.exit):
                error_message = "exit: probabilities must lie in [0, 1]"
                raise ValueError(error_message)
            if not math.isclose(sum(self.exit), 1.0, abs_tol=PROBABILITY_TOLERANCE):
                error_message = f"exit: probabilities must sum to 1, got {sum(self.exit)}"
                raise ValueError(error_message)

        return self

    def stay_probabilities(self, n_regular: int) -> FloatArray:
        """Per-model ``a_s`` for ``n_regular`` regular models."""
        return _broadcast("stay", self.stay, n_regular)

    def exit_probabilities(self, n_regular: int) -> FloatArray:
        """Per-model ``c_s`` for ``n_regular`` regular models."""
        if self.exit is None:
            return np.full(n_regular, 1.0 / n_regular)
        return _broadcast("exit", self.exit, n_regular)


def _broadcast(name: str, value: float | list[float], size: int) -> FloatArray:
    values = np.asarray(value, dtype=float).reshape(-1)
    if values.shape[0] == 1:
        return np.full(size, values[0])
    if values.shape[0] != size:
        error_message = f"{name}: expected 1 or {size} probabilities, got {values.shape[0]}"
        raise InvalidInputError(error_message)
    return values


def transition_matrix(spec: SwitchTransitionSpec, n_models: int) -> FloatArray:
    """
    Row-stochastic switch matrix ``Pi[source, destination]``; the last model is the reset model.

    Regular model ``s`` stays with ``a_s`` and enters the reset with ``1 - a_s``. The reset model moves to regular
    model ``s`` with ``c_s`` and never to itself, so a reset lasts exactly one step.

    :raises InvalidInputError: If there is no regular model or a row does not sum to one
    """
    n_regular = n_models - 1
    if n_regular < 1:
        error_message = f"A bank needs at least one regular model besides the reset, got {n_models} models"
        raise InvalidInputError(error_message)

    stay = spec.stay_probabilities(n_regular)
    Pi = np.zeros((n_models, n_models))
    Pi[np.arange(n_regular), np.arange(n_regular)] = stay
    Pi[:n_regular, n_regular] = 1.0 - stay
    Pi[n_regular, :n_regular] = spec.exit_probabilities(n_regular)

    row_sums = Pi.sum(axis=1)
    if not np.allclose(row_sums, 1.0, atol=PROBABILITY_TOLERANCE, rtol=0.0):
        error_message = f"Switch matrix rows must sum to 1, got {row_sums}"
        raise InvalidInputError(error_message)
    return Pi


@dataclass(eq=False)
class ModelBank:
    """Regular models, one per length-scale assignment, followed by the reset model."""

    assignments: tuple[tuple[float, ...], ...]
    """Length-scale of each force, per regular model, in lexicographic order."""

    models: tuple[ContinuousModel, ...]
    reset_prior: FloatArray
    """Force covariance ``blkdiag(P_u1, ..., P_uR)`` the reset model re-primes with."""

    _caches: list[TransitionCache] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        """Validate that the regular models share one layout and set up per-model transition caches."""
        if not self.models:
            error_message = "A model bank needs at least one regular model"
            raise InvalidInputError(error_message)
        if any(model.layout.names != self.models[0].layout.names for model in self.models):
            error_message = "All regular models of a bank must share one state layout"
            raise InvalidInputError(error_message)

        base = self.models[0]
        self._caches = [TransitionCache.for_model(model) for model in self.models]
        self._caches.append(TransitionCache(lambda dt: reset_transition(base, dt, self.reset_prior)))

    @property
    def n_models(self) -> int:
        """Return ``M``, the reset model included."""
        return len(self.models) + 1

    @property
    def reset_index(self) -> int:
        """Index of the reset model."""
        return len(self.models)

    @property
    def dim(self) -> int:
        """Shared state dimension."""
        return self.models[0].dim

    @property
    def labels(self) -> list[str]:
        """Human-readable model names; the reset model is ``reset``."""
        names = [f"l=({', '.join(f'{scale:g}' for scale in assignment)})" for assignment in self.assignments]
        return [*names, "reset"]

    @property
    def initial_probs(self) -> FloatArray:
        """Uniform over the regular models, zero on the reset model."""
        probs = np.zeros(self.n_models)
        probs[: self.reset_index] = 1.0 / len(self.models)
        return probs

    def prior(self, s: int) -> Gaussian:
        """Initial state of model ``s``; the reset model starts from the first model's output prior."""
        if s == self.reset_index:
            base = self.models[0].prior
            cov = base.cov.copy()
            nx = self.models[0].layout.n_output_states
            cov[nx:, nx:] = self.reset_prior
            cov[:nx, nx:] = 0.0
            cov[nx:, :nx] = 0.0
            return Gaussian(base.mean.copy(), cov)
        return self.models[s].prior

    def transition(self, s: int, dt: float) -> DiscreteTransition:
        """Transition of model ``s`` over ``dt``; the reset model uses the reset construction."""
        return self._caches[s](dt)


def build_model_bank(  # noqa: PLR0913
    output_spec: OutputModelSpec,
    lengthscales: Sequence[float],
    nu: float = 1.5,
    sigma2: float = 1.0,
    reset_prior: FloatArray | None = None,
    prior_factory: PriorFactory | None = None,
    px0_variance: float = 1.0,
    reset_prior_scale: float = 1.0,
) -> ModelBank:
    """
    Enumerate every assignment of the candidate length-scales to the ``R`` forces.

    :param output_spec: Shared output model
    :param lengthscales: The ``L`` candidate length-scales
    :param nu: Matérn smoothness, used when no ``prior_factory`` is given
    :param sigma2: Force variance, used when no ``prior_factory`` is given
    :param reset_prior: Force covariance the reset model re-primes with; defaults to the stationary covariance for
                        the shortest length-scale times ``reset_prior_scale``
    :param prior_factory: Maps a length-scale to a force prior
    :param px0_variance: Initial variance of the output states
    :param reset_prior_scale: Multiplier of the default reset prior
    :returns: ``L^R`` regular models in lexicographic order followed by the reset model
    """
    if len(lengthscales) < 1:
        error_message = "At least one candidate length-scale is required"
        raise InvalidInputError(error_message)

    def default_factory(scale: float) -> PriorSSM:
        return matern_ssm(MaternSpec(nu=nu, lengthscale=scale, variance=sigma2))

    factory = prior_factory or default_factory
    priors = {scale: factory(scale) for scale in lengthscales}

    assignments = tuple(itertools.product(lengthscales, repeat=output_spec.n_forces))
    models = tuple(
        build_lfm(output_spec, [priors[scale] for scale in assignment], px0_variance) for assignment in assignments
    )

    if reset_prior is None:
        shortest = priors[min(lengthscales)]
        reset_prior = reset_prior_scale * scipy.linalg.block_diag(*[shortest.P0] * output_spec.n_forces)

    logging.info("Built a model bank of %i regular models and a reset model", len(models))
    return ModelBank(assignments=assignments, models=models, reset_prior=np.asarray(reset_prior, dtype=float))


@dataclass(frozen=True, eq=False)
class WeightedGaussians:
    """Gaussian components with log weights."""

    log_weights: FloatArray
    means: FloatArray
    """``N x n`` component means."""

    covs: FloatArray
    """``N x n x n`` component covariances."""

    @property
    def size(self) -> int:
        """Return the number of components."""
        return int(self.log_weights.shape[0])

    @property
    def log_mass(self) -> float:
        """Log of the total weight; ``-inf`` for an empty mixture."""
        if self.size == 0:
            return -math.inf
        return float(logsumexp(self.log_weights))

    @classmethod
    def empty(cls, dim: int) -> "WeightedGaussians":
        """A mixture without components."""
        return cls(np.zeros(0), np.zeros((0, dim)), np.zeros((0, dim, dim)))

    @classmethod
    def from_components(cls, log_weights: Sequence[float], states: Sequence[Gaussian], dim: int) -> "WeightedGaussians":
        """Stack individual Gaussians into a mixture."""
        if not states:
            return cls.empty(dim)
        return cls(
            np.asarray(log_weights, dtype=float),
            np.stack([state.mean for state in states]),
            np.stack([state.cov for state in states]),
        )

    def component(self, i: int) -> Gaussian:
        """Return component ``i`` as a Gaussian."""
        return Gaussian(self.means[i], self.covs[i])

    def moments(self) -> Gaussian:
        """Moment-matched single Gaussian of the (normalized) mixture."""
        return _merge(self.log_weights, self.means, self.covs)


def _merge(log_weights: FloatArray, means: FloatArray, covs: FloatArray) -> Gaussian:
    weights = np.exp(log_weights - logsumexp(log_weights))
    weights = weights / weights.sum()
    mean = weights @ means
    spread = means - mean
    cov = np.einsum("i,ijk->jk", weights, covs) + np.einsum("i,ij,ik->jk", weights, spread, spread)
    return Gaussian(mean, symmetrize(cov))


def collapse(mix: WeightedGaussians, K: int) -> WeightedGaussians:
    """
    Reduce a mixture to at most ``K`` components.

    The ``K - 1`` heaviest components are kept as they are and the rest are merged into one moment-matched
    Gaussian carrying their total weight. Ties at the retention boundary go to the lower index.

    :raises InvalidInputError: If ``K < 1``
    """
    if K < 1:
        error_message = f"Collapse target must be at least 1, got {K}"
        raise InvalidInputError(error_message)
    if mix.size <= K:
        return mix

    order = np.argsort(-mix.log_weights, kind="stable")
    keep, rest = order[: K - 1], order[K - 1 :]
    merged = _merge(mix.log_weights[rest], mix.means[rest], mix.covs[rest])

    return WeightedGaussians(
        log_weights=np.append(mix.log_weights[keep], logsumexp(mix.log_weights[rest])),
        means=np.vstack([mix.means[keep], merged.mean[None, :]]),
        covs=np.concatenate([mix.covs[keep], merged.cov[None, :, :]]),
    )


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Joint posterior over (model, state) at one time: one weighted mixture per model."""

    components: tuple[WeightedGaussians, ...]

    @property
    def log_mass(self) -> float:
        """Log of the total weight over all models."""
        masses = [mix.log_mass for mix in self.components]
        return float(logsumexp(masses)) if any(np.isfinite(masses)) else -math.inf

    @property
    def model_probs(self) -> FloatArray:
        """Normalized probability of each model."""
        masses = np.array([mix.log_mass for mix in self.components])
        return np.exp(masses - logsumexp(masses))

    def moments(self) -> Gaussian:
        """Overall moment-matched Gaussian over every model and component."""
        populated = [mix for mix in self.components if mix.size]
        return _merge(
            np.concatenate([mix.log_weights for mix in populated]),
            np.concatenate([mix.means for mix in populated]),
            np.concatenate([mix.covs for mix in populated]),
        )


@dataclass(frozen=True, eq=False)
class ADFResult:
    """Forward pass output."""

    times: FloatArray
    mixtures: list[GaussianMixture]
    model_probs: FloatArray
    """``T x M`` filtered model probabilities ``p(s_k | y_1:k)``."""

    loglik_increments: FloatArray
    filter_invocations: list[int]
    """Kalman prediction-update pairs run on each step."""

    @property
    def loglik(self) -> float:
        """Approximate log marginal likelihood."""
        return float(np.sum(self.loglik_increments))


@dataclass(frozen=True, eq=False)
class ECResult:
    """Backward pass output."""

    times: FloatArray
    mixtures: list[GaussianMixture]
    model_probs: FloatArray
    """``T x M`` smoothed model probabilities ``p(s_k | y_1:T)``."""

    @property
    def reset_probs(self) -> FloatArray:
        """Smoothed probability of the reset model per step."""
        return self.model_probs[:, -1]


def _check_inputs(bank: ModelBank, Pi: FloatArray, grid: TimeGrid, budget: int, name: str) -> None:
    if Pi.shape != (bank.n_models, bank.n_models):
        error_message = f"Switch matrix shape {Pi.shape} does not match {bank.n_models} models"
        raise InvalidInputError(error_message)
    if budget < 1:
        error_message = f"{name} must be at least 1, got {budget}"
        raise InvalidInputError(error_message)
    if grid.size < 1:
        error_message = "The grid is empty"
        raise InvalidInputError(error_message)


def _normalize(
    per_model: list[list[tuple[float, Gaussian]]],
    dim: int,
    time: float,
) -> tuple[list[WeightedGaussians], float]:
    all_weights = [w for branches in per_model for w, _ in branches]
    normalizer = float(logsumexp(all_weights)) if all_weights else -math.inf
    if not np.isfinite(normalizer):
        error_message = f"Every mixture weight vanished at t={time}"
        raise NumericalFailureError(error_message)

    mixtures = [
        WeightedGaussians.from_components([w - normalizer for w, _ in branches], [g for _, g in branches], dim)
        for branches in per_model
    ]
    return mixtures, normalizer


def adf(
    bank: ModelBank,
    Pi: FloatArray,
    meas: MeasurementModel,
    grid: TimeGrid,
    I: int,  # noqa: E741
) -> ADFResult:
    """
    Assumed density filtering over the switching model.

    Each step propagates every component of every source model through every destination model with a non-zero
    switch probability, weights the branch by ``Pi[source, destination]`` times its observation likelihood, then
    collapses each destination model's mixture to ``I`` components.

    :param bank: Model bank
    :param Pi: Row-stochastic switch matrix
    :param meas: Measurement model shared by all models
    :param grid: Observation grid; the model prior holds at ``grid.t0``
    :param I: Components retained per model
    :raises NumericalFailureError: If every branch weight vanishes
    """
    _check_inputs(bank, Pi, grid, I, "I")
    log_Pi = np.log(np.where(Pi > 0.0, Pi, 1.0))
    M, n = bank.n_models, bank.dim

    mixtures: list[GaussianMixture] = []
    increments = np.zeros(grid.size)
    invocations: list[int] = []
    previous: GaussianMixture | None = None
    last_time = grid.prior_time

    for k, t in enumerate(grid.times):
        dt = float(t - last_time)
        branches: list[list[tuple[float, Gaussian]]] = [[] for _ in range(M)]
        count = 0

        for dest in range(M):
            if previous is None:
                if bank.initial_probs[dest] <= 0.0:
                    continue
                sources = [(math.log(bank.initial_probs[dest]), bank.prior(dest))]
            else:
                sources = [
                    (float(mix.log_weights[i]) + log_Pi[src, dest], mix.component(i))
                    for src, mix in enumerate(previous.components)
                    if Pi[src, dest] > 0.0
                    for i in range(mix.size)
                ]

            for log_weight, state in sources:
                predicted = kf_predict(state, bank.transition(dest, dt)) if dt > 0.0 else state
                updated, increment = kf_update(predicted, grid.observations[k], meas)
                branches[dest].append((log_weight + increment, updated))
                count += 1

        collected, increments[k] = _normalize(branches, n, float(t))
        current = GaussianMixture(tuple(collapse(mix, I) for mix in collected))
        mixtures.append(current)
        invocations.append(count)
        previous = current
        last_time = float(t)

    logging.debug("ADF ran %i Kalman branches over %i steps", sum(invocations), grid.size)
    return ADFResult(
        times=grid.times,
        mixtures=mixtures,
        model_probs=np.stack([mixture.model_probs for mixture in mixtures]),
        loglik_increments=increments,
        filter_invocations=invocations,
    )


@dataclass(frozen=True, eq=False)
class _FutureLikelihood:
    """
    Likelihood of the data after step ``k`` as a function of the state at ``k``.

    It is the ratio of a smoothed component to the filtered component it descends from, kept in coordinates
    centered at the smoothed mean: ``exp(-z^T P z / 2 + h^T z + c)`` with ``z = x - center``.
    """

    center: FloatArray
    precision: FloatArray
    shift: FloatArray
    log_scale: float

    @classmethod
    def between(cls, smoothed: Gaussian, ancestor: Gaussian) -> "_FutureLikelihood":
        """Ratio ``smoothed / ancestor``."""
        smoothed_precision, smoothed_logdet = _precision(smoothed.cov, "smoothed covariance")
        ancestor_precision, ancestor_logdet = _precision(ancestor.cov, "filtered covariance")
        offset = ancestor.mean - smoothed.mean
        weighted = ancestor_precision @ offset
        return cls(
            center=smoothed.mean,
            precision=smoothed_precision - ancestor_precision,
            shift=-weighted,
            log_scale=0.5 * (float(offset @ weighted) - smoothed_logdet + ancestor_logdet),
        )

    def condition(self, state: Gaussian) -> tuple[Gaussian, float] | None:
        """
        Multiply ``state`` by the likelihood.

        :returns: The normalized product and the log of its integral, or None if the product is not a proper
                  Gaussian
        """
        state_precision, state_logdet = _precision(state.cov, "updated covariance")
        offset = state.mean - self.center
        weighted = state_precision @ offset
        precision = symmetrize(state_precision + self.precision)
        try:
            chol = scipy.linalg.cholesky(precision, lower=True)
        except (np.linalg.LinAlgError, ValueError):
            return None

        eta = weighted + self.shift
        cov = symmetrize(scipy.linalg.cho_solve((chol, True), np.eye(state.dim)))
        mean = cov @ eta
        log_integral = (
            -0.5 * state_logdet
            - 0.5 * float(offset @ weighted)
            + self.log_scale
            - float(np.sum(np.log(np.diag(chol))))
            + 0.5 * float(eta @ mean)
        )
        return Gaussian(self.center + mean, cov), log_integral


def _precision(cov: FloatArray, what: str) -> tuple[FloatArray, float]:
    chol = jittered_cholesky(cov, what)
    precision = scipy.linalg.cho_solve((chol, True), np.eye(cov.shape[0]))
    return symmetrize(precision), 2.0 * float(np.sum(np.log(np.diag(chol))))


@dataclass(frozen=True, eq=False)
class _Smoothed:
    """A smoothed component, the filtered component it descends from and the key of its future likelihood."""

    log_weight: float
    state: Gaussian
    ancestor: Gaussian
    key: int


def _collapse_smoothed(components: list[_Smoothed], K: int, merged_key: int) -> list[_Smoothed]:
    if len(components) <= K:
        return components

    log_weights = np.array([c.log_weight for c in components])
    order = np.argsort(-log_weights, kind="stable")
    keep, rest = order[: K - 1], order[K - 1 :]
    states = _merge(
        log_weights[rest],
        np.stack([components[i].state.mean for i in rest]),
        np.stack([components[i].state.cov for i in rest]),
    )
    ancestors = _merge(
        log_weights[rest],
        np.stack([components[i].ancestor.mean for i in rest]),
        np.stack([components[i].ancestor.cov for i in rest]),
    )
    merged = _Smoothed(float(logsumexp(log_weights[rest])), states, ancestors, merged_key)
    return [*(components[i] for i in keep), merged]


def _as_mixture(components: list[_Smoothed], dim: int) -> WeightedGaussians:
    return WeightedGaussians.from_components([c.log_weight for c in components], [c.state for c in components], dim)


@dataclass(frozen=True, eq=False)
class _Branch:
    """Filtered component ``(i, s)`` at ``k`` carried through model ``s'`` to ``k + 1``."""

    source: int
    filtered: Gaussian
    predicted: Gaussian
    updated: Gaussian
    log_weight: float
    """Filtered weight times ``Pi[s, s']``, in log space."""

    log_likelihood: float
    """Log-likelihood of the observation at ``k + 1``."""


def _branches(
    filtered: GaussianMixture,
    log_Pi_into: FloatArray,
    trans: DiscreteTransition,
    y: FloatArray,
    meas: MeasurementModel,
) -> list[_Branch]:
    """Carry every filtered component with a non-zero switch probability through one destination model."""
    branches: list[_Branch] = []
    for src, mix in enumerate(filtered.components):
        if not np.isfinite(log_Pi_into[src]):
            continue
        for i in range(mix.size):
            state = mix.component(i)
            predicted = kf_predict(state, trans)
            updated, increment = kf_update(predicted, y, meas)
            log_weight = float(mix.log_weights[i]) + float(log_Pi_into[src])
            branches.append(_Branch(src, state, predicted, updated, log_weight, increment))
    return branches


def _backward_group(
    branches: list[_Branch],
    members: list[_Smoothed],
) -> tuple[list[tuple[_Branch, float, Gaussian]], bool]:
    """
    Mixing weights and RTS targets of every branch into one group of smoothed components.

    :returns: ``(branch, log mixing weight, target)`` triples normalized over the branches, and whether the
              predictive density at the group mean had to stand in for an improper future likelihood
    """
    future = _FutureLikelihood.between(members[0].state, members[0].ancestor)
    conditioned = [future.condition(branch.updated) for branch in branches]

    weighted: list[tuple[_Branch, float, Gaussian]] = []
    if all(item is not None for item in conditioned):
        for branch, item in zip(branches, conditioned, strict=True):
            target, log_integral = cast("tuple[Gaussian, float]", item)
            weighted.append((branch, branch.log_weight + branch.log_likelihood + log_integral, target))
        exact = True
    else:
        target = members[0].state
        for branch in branches:
            log_density = gaussian_logpdf(target.mean, branch.predicted.mean, branch.predicted.cov)
            weighted.append((branch, branch.log_weight + log_density, target))
        exact = False

    log_norm = float(logsumexp([log_mixing for _, log_mixing, _ in weighted]))
    return [(branch, log_mixing - log_norm, target) for branch, log_mixing, target in weighted], exact


def ec(  # noqa: C901, PLR0913
    bank: ModelBank,
    Pi: FloatArray,
    meas: MeasurementModel,
    grid: TimeGrid,
    adf_result: ADFResult,
    J: int,
) -> ECResult:
    """
    Expectation-correction smoothing of an ADF run.

    Every smoothed component remembers the filtered component it descends from; their ratio is the likelihood of
    the later data given the state. Smoothed components of model ``s'`` at ``k + 1`` sharing that likelihood form a
    group. Each filtered component ``(i, s)`` at ``k`` is predicted through ``s'`` and updated with ``y_k+1``; its
    mixing weight into a group is the filtered weight times ``Pi[s, s']`` times the observation likelihood times
    the integral of the updated Gaussian against the group's likelihood, normalized over the branches. The
    normalized product is the target of one RTS step. Each model's mixture is then collapsed to ``J`` components,
    so without collapse the smoothed model probabilities equal exhaustive enumeration.

    :param bank: Model bank of the ADF run
    :param Pi: Switch matrix of the ADF run
    :param meas: Measurement model of the ADF run
    :param grid: Grid of the ADF run
    :param adf_result: Forward pass output
    :param J: Components retained per model
    :raises InvalidInputError: If ``adf_result`` was produced on another grid
    :raises NumericalFailureError: If every smoothed weight vanishes
    """
    _check_inputs(bank, Pi, grid, J, "J")
    if adf_result.times.shape != grid.times.shape or not np.array_equal(adf_result.times, grid.times):
        error_message = "ADF result was not produced on this grid"
        raise InvalidInputError(error_message)

    with np.errstate(divide="ignore"):
        log_Pi = np.log(Pi)
    M, n = bank.n_models, bank.dim

    # At the last step every component is its own ancestor and the future likelihood is flat.
    later: list[list[_Smoothed]] = []
    for mix in adf_result.mixtures[-1].components:
        final = collapse(mix, J)
        later.append(
            [_Smoothed(float(w), final.component(j), final.component(j), 0) for j, w in enumerate(final.log_weights)]
        )
    smoothed = [GaussianMixture(tuple(_as_mixture(components, n) for components in later))]
    fallbacks = 0

    for k in range(grid.size - 2, -1, -1):
        dt = float(grid.times[k + 1] - grid.times[k])
        filtered = adf_result.mixtures[k]
        current: list[list[_Smoothed]] = [[] for _ in range(M)]
        keys: dict[tuple[int, int], int] = {}

        for dest, later_components in enumerate(later):
            if not later_components:
                continue
            trans = bank.transition(dest, dt)
            branches = _branches(filtered, log_Pi[:, dest], trans, grid.observations[k + 1], meas)
            if not branches:
                continue

            groups: dict[int, list[_Smoothed]] = {}
            for component in later_components:
                groups.setdefault(component.key, []).append(component)

            for key, members in groups.items():
                group_weight = float(logsumexp([member.log_weight for member in members]))
                weighted, exact = _backward_group(branches, members)
                if not exact:
                    fallbacks += 1
                new_key = keys.setdefault((dest, key), len(keys) + 1)
                for branch, log_mixing, target in weighted:
                    state = rts_backward_step(branch.filtered, branch.predicted, target, trans)
                    current[branch.source].append(
                        _Smoothed(group_weight + log_mixing, state, branch.filtered, new_key)
                    )

        all_weights = [c.log_weight for components in current for c in components]
        normalizer = float(logsumexp(all_weights)) if all_weights else -math.inf
        if not np.isfinite(normalizer):
            error_message = f"Every mixture weight vanished at t={grid.times[k]}"
            raise NumericalFailureError(error_message)

        later = [
            _collapse_smoothed(
                [_Smoothed(c.log_weight - normalizer, c.state, c.ancestor, c.key) for c in components], J, -1 - src
            )
            for src, components in enumerate(current)
        ]
        smoothed.insert(0, GaussianMixture(tuple(_as_mixture(components, n) for components in later)))

    if fallbacks:
        logging.debug("EC weighed %i merged groups by the predictive density at their mean", fallbacks)
    return ECResult(
        times=grid.times,
        mixtures=smoothed,
        model_probs=np.stack([mixture.model_probs for mixture in smoothed]),
    )


def extract_switch_points(
    times: FloatArray,
    reset_probs: FloatArray,
    threshold: float = DEFAULT_THRESHOLD,
) -> list[float]:
    """
    Times where the reset probability exceeds ``threshold``.

    Consecutive super-threshold steps form one run, reported at the time of its highest probability.

    :raises InvalidInputError: If the threshold is outside ``(0, 1)`` or the arrays differ in length
    """
    if not 0.0 < threshold < 1.0:
        error_message = f"Threshold must lie in (0, 1), got {threshold}"
        raise InvalidInputError(error_message)

    times = np.asarray(times, dtype=float)
    reset_probs = np.asarray(reset_probs, dtype=float)
    if times.shape != reset_probs.shape:
        error_message = f"Got {reset_probs.shape[0]} probabilities for {times.shape[0]} times"
        raise InvalidInputError(error_message)

    switches: list[float] = []
    above = reset_probs > threshold
    k = 0
    while k < above.shape[0]:
        if not above[k]:
            k += 1
            continue
        end = k
        while end < above.shape[0] and above[end]:
            end += 1
        peak = k + int(np.argmax(reset_probs[k:end]))
        switches.append(float(times[peak]))
        k = end

    return switches
