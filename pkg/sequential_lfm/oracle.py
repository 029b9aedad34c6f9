"""
Brute-force reference inference.

The batch oracle materializes the joint Gaussian of all grid states and conditions it on every observation at
once; the enumeration oracle runs one Kalman filter per switching sequence. Both scale badly on purpose and are
guarded by size caps.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from sequential_lfm.errors import InvalidInputError, NumericalFailureError, ResourceLimitError
from sequential_lfm.kalman import TimeGrid, TransitionCache, kf_predict, kf_update
from sequential_lfm.lfm import ContinuousModel, MeasurementModel
from sequential_lfm.matrixnum import Gaussian, jittered_cholesky, logpdf_from_cholesky, symmetrize
from sequential_lfm.slds import ModelBank
from sequential_lfm.types import FloatArray

MAX_JOINT_DIM = 500
MAX_SEQUENCES = 10_000


@dataclass(frozen=True, eq=False)
class BatchJoint:
    """Joint Gaussian of the stacked states ``(x_1, ..., x_T)``."""

    mean: FloatArray
    cov: FloatArray
    dim: int
    """Per-step state dimension ``n``."""

    @property
    def size(self) -> int:
        """Return the number of stacked steps ``T``."""
        return self.mean.shape[0] // self.dim if self.dim else 0

    def block(self, j: int, k: int) -> FloatArray:
        """Cross-covariance ``Cov(x_j, x_k)``."""
        n = self.dim
        return self.cov[j * n : (j + 1) * n, k * n : (k + 1) * n]

    def marginal(self, k: int) -> Gaussian:
        """Marginal of ``x_k``."""
        n = self.dim
        return Gaussian(self.mean[k * n : (k + 1) * n], self.block(k, k))


@dataclass(frozen=True, eq=False)
class BatchPosterior:
    """Per-step posterior marginals and the data log-density."""

    marginals: list[Gaussian]
    loglik: float


@dataclass(frozen=True, eq=False)
class EnumerationResult:
    """Exact switching posterior over every model sequence."""

    sequences: list[tuple[int, ...]]
    weights: FloatArray
    """Normalized posterior probability of each sequence."""

    filtered_probs: FloatArray
    """``T x M`` exact ``p(s_k | y_1:k)``."""

    smoothed_probs: FloatArray
    """``T x M`` exact ``p(s_k | y_1:T)``."""

    loglik: float


def batch_joint(model: ContinuousModel, grid: TimeGrid, max_dim: int = MAX_JOINT_DIM) -> BatchJoint:
    """
    Joint prior of the states at the grid times, built from the Markov factorization.

    ``Cov(x_j, x_k) = P_j Phi_{j->k}^T`` for ``j < k`` where ``Phi`` chains the step transitions.

    :raises ResourceLimitError: If ``n T`` exceeds ``max_dim``
    """
    n, T = model.dim, grid.size
    if n * T > max_dim:
        error_message = f"Joint covariance of size {n * T} exceeds the cap of {max_dim}"
        raise ResourceLimitError(error_message)

    cache = TransitionCache.for_model(model)
    identity = np.eye(n)
    transitions: list[FloatArray] = []
    means: list[FloatArray] = []
    marginals: list[FloatArray] = []

    state = model.prior
    previous = grid.prior_time
    for t in grid.times:
        dt = float(t - previous)
        A = identity
        if dt > 0.0:
            trans = cache(dt)
            A = trans.A
            state = kf_predict(state, trans)
        transitions.append(A)
        means.append(state.mean)
        marginals.append(state.cov)
        previous = float(t)

    cov = np.zeros((n * T, n * T))
    for j in range(T):
        Phi = identity
        cov[j * n : (j + 1) * n, j * n : (j + 1) * n] = marginals[j]
        for k in range(j + 1, T):
            Phi = transitions[k] @ Phi
            block = marginals[j] @ Phi.T
            cov[j * n : (j + 1) * n, k * n : (k + 1) * n] = block
            cov[k * n : (k + 1) * n, j * n : (j + 1) * n] = block.T

    return BatchJoint(mean=np.concatenate(means), cov=cov, dim=n)


def batch_condition(joint: BatchJoint, grid: TimeGrid, meas: MeasurementModel) -> BatchPosterior:
    """
    Condition the joint prior on all non-missing observations at once.

    :raises NumericalFailureError: If the observation marginal covariance is singular after jitter
    """
    n, T = joint.dim, joint.size
    if grid.size != T:
        error_message = f"Joint has {T} steps, the grid {grid.size}"
        raise InvalidInputError(error_message)

    H_full = scipy.linalg.block_diag(*[meas.H] * T) if T else np.zeros((0, 0))
    R_full = scipy.linalg.block_diag(*[meas.R] * T) if T else np.zeros((0, 0))
    y_full = grid.observations.reshape(-1)
    observed = ~np.isnan(y_full)

    if not np.any(observed):
        return BatchPosterior([joint.marginal(k) for k in range(T)], 0.0)

    H = H_full[observed]
    R = R_full[np.ix_(observed, observed)]
    residual = y_full[observed] - H @ joint.mean
    SigmaHt = joint.cov @ H.T
    chol = jittered_cholesky(H @ SigmaHt + R, "observation marginal covariance")

    K = scipy.linalg.cho_solve((chol, True), SigmaHt.T).T
    mean = joint.mean + K @ residual
    cov = symmetrize(joint.cov - K @ SigmaHt.T)

    marginals = [Gaussian(mean[k * n : (k + 1) * n], cov[k * n : (k + 1) * n, k * n : (k + 1) * n]) for k in range(T)]
    return BatchPosterior(marginals, logpdf_from_cholesky(residual, chol))


def enumerate_slds_posterior(
    bank: ModelBank,
    Pi: FloatArray,
    meas: MeasurementModel,
    grid: TimeGrid,
    max_sequences: int = MAX_SEQUENCES,
) -> EnumerationResult:
    """
    Exact switching posterior by running a conditional Kalman filter along every model sequence.

    Prefixes are shared depth first and zero-probability branches are pruned.

    :raises ResourceLimitError: If ``M^T`` exceeds ``max_sequences``
    :raises NumericalFailureError: If every sequence has zero posterior weight
    """
    M, T = bank.n_models, grid.size
    if T * math.log(M) > math.log(max_sequences):
        error_message = f"{M}^{T} switching sequences exceed the cap of {max_sequences}"
        raise ResourceLimitError(error_message)

    with np.errstate(divide="ignore"):
        log_Pi = np.log(Pi)
        log_initial = np.log(bank.initial_probs)

    sequences: list[tuple[int, ...]] = []
    log_weights: list[float] = []
    prefix_weights: list[list[tuple[int, float]]] = [[] for _ in range(T)]

    def visit(prefix: tuple[int, ...], state: Gaussian, log_weight: float, previous: float) -> None:
        k = len(prefix)
        if k == T:
            sequences.append(prefix)
            log_weights.append(log_weight)
            return

        t = float(grid.times[k])
        dt = t - previous
        for s in range(M):
            log_prior = log_initial[s] if k == 0 else log_Pi[prefix[-1], s]
            if not np.isfinite(log_prior):
                continue
            start = bank.prior(s) if k == 0 else state
            predicted = kf_predict(start, bank.transition(s, dt)) if dt > 0.0 else start
            updated, increment = kf_update(predicted, grid.observations[k], meas)
            branch_weight = log_weight + float(log_prior) + increment
            prefix_weights[k].append((s, branch_weight))
            visit((*prefix, s), updated, branch_weight, t)

    visit((), bank.prior(0), 0.0, grid.prior_time)

    if not log_weights or not np.isfinite(logsumexp(log_weights)):
        error_message = "Every switching sequence has zero posterior weight"
        raise NumericalFailureError(error_message)

    loglik = float(logsumexp(log_weights))
    weights = np.exp(np.asarray(log_weights) - loglik)

    filtered = np.zeros((T, M))
    for k, entries in enumerate(prefix_weights):
        depth_norm = logsumexp([w for _, w in entries])
        for s, w in entries:
            filtered[k, s] += math.exp(w - depth_norm)

    smoothed = np.zeros((T, M))
    for sequence, weight in zip(sequences, weights, strict=True):
        smoothed[np.arange(T), list(sequence)] += weight

    logging.debug("Enumerated %i switching sequences", len(sequences))
    return EnumerationResult(sequences, weights, filtered, smoothed, loglik)
