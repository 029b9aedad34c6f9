"""
Dense small-matrix numerical kernels.

Everything here is a pure function of its inputs: the matrix exponential, exact discretization of linear
time-invariant SDEs, the stationary Lyapunov solve and Gaussian log-densities.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from sequential_lfm.errors import InvalidInputError, NoStationarySolutionError, NumericalFailureError
from sequential_lfm.types import FloatArray

HURWITZ_MARGIN = 1e-12
"""Largest eigenvalue real part still treated as stable is ``-HURWITZ_MARGIN``."""

JITTER_SCALE = 1e-10
"""Relative diagonal jitter, scaled by ``trace(P) / dim``, added when a factorization fails."""

LYAPUNOV_TOLERANCE = 1e-10

MAX_SUBSTEP_NORM = 1.0
"""Largest ``|F|_1 h`` exponentiated in one Van Loan block; longer steps are built by doubling."""


@dataclass(frozen=True, eq=False)
class Gaussian:
    """A multivariate Gaussian, the unit of filtering and smoothing state."""

    mean: FloatArray
    """Mean vector in state units."""

    cov: FloatArray
    """Symmetric positive-semidefinite covariance matrix."""

    @property
    def dim(self) -> int:
        """Return the dimension of the distribution."""
        return int(self.mean.shape[0])

    def is_valid(self, tol: float = 1e-10) -> bool:
        """
        Check the covariance invariants: symmetry and (near) positive semidefiniteness.

        :param tol: Relative tolerance applied to the covariance norm
        :returns: True if the covariance is symmetric and its smallest eigenvalue is above ``-tol * ||cov||``
        """
        if self.cov.shape != (self.dim, self.dim):
            return False
        if self.dim == 0:
            return True
        scale = max(float(np.linalg.norm(self.cov)), 1.0)
        if not np.allclose(self.cov, self.cov.T, atol=tol * scale, rtol=0.0):
            return False
        return bool(np.linalg.eigvalsh(symmetrize(self.cov)).min() >= -tol * scale)

    def marginal(self, index: slice | list[int]) -> "Gaussian":
        """Return the marginal distribution of the selected components."""
        idx = np.arange(self.dim)[index]
        return Gaussian(self.mean[idx], self.cov[np.ix_(idx, idx)])


@dataclass(frozen=True, eq=False)
class DiscreteTransition:
    """Transition matrix and process noise covariance for one time step."""

    A: FloatArray
    """State transition matrix ``exp(F dt)``."""

    Q: FloatArray
    """Process noise covariance accumulated over the step."""


def symmetrize(P: FloatArray) -> FloatArray:
    """Return ``(P + P^T) / 2``."""
    return 0.5 * (P + P.T)


def _require_square(M: FloatArray, name: str) -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:  # noqa: PLR2004
        error_message = f"{name} must be a square matrix, got shape {M.shape}"
        raise InvalidInputError(error_message)


def _require_finite(M: FloatArray, name: str) -> None:
    if not np.all(np.isfinite(M)):
        error_message = f"{name} contains non-finite entries"
        raise InvalidInputError(error_message)


def jittered_cholesky(P: FloatArray, what: str = "matrix") -> FloatArray:
    """
    Lower Cholesky factor of a symmetric positive-definite matrix.

    On failure a diagonal jitter of ``JITTER_SCALE * trace(P) / dim`` is added and the factorization is retried
    once.

    :param P: The matrix to factor
    :param what: Name used in log and error messages
    :returns: Lower-triangular ``C`` with ``C C^T = P`` (plus jitter if it was needed)
    :raises NumericalFailureError: If the jittered matrix still is not positive-definite
    """
    P = symmetrize(np.asarray(P, dtype=float))
    try:
        return np.asarray(scipy.linalg.cholesky(P, lower=True))
    except (np.linalg.LinAlgError, ValueError):
        dim = P.shape[0]
        jitter = JITTER_SCALE * float(np.trace(P)) / dim
        if not jitter > 0.0:
            error_message = f"{what} is not positive-definite and has no positive trace to jitter"
            raise NumericalFailureError(error_message) from None

        logging.debug("Cholesky of %s failed--retrying with jitter %.3e", what, jitter)

    try:
        return np.asarray(scipy.linalg.cholesky(P + jitter * np.eye(P.shape[0]), lower=True))
    except (np.linalg.LinAlgError, ValueError):
        error_message = f"{what} is not positive-definite after jitter"
        raise NumericalFailureError(error_message) from None


def sampling_factor(P: FloatArray) -> FloatArray:
    """
    Factor ``C`` with ``C C^T = P`` for drawing samples; an all-zero covariance yields a zero factor.

    :raises NumericalFailureError: If the covariance is non-zero and not positive-definite after jitter
    """
    if not np.any(P):
        return np.zeros_like(P, dtype=float)
    return jittered_cholesky(P, "sampling covariance")


def mat_exp(M: FloatArray) -> FloatArray:
    """
    Matrix exponential by scaling-and-squaring with a Pade approximant.

    :param M: Finite square matrix
    :returns: ``exp(M)``
    :raises InvalidInputError: If ``M`` is not square or has non-finite entries
    """
    M = np.asarray(M, dtype=float)
    _require_square(M, "M")
    _require_finite(M, "M")
    if M.shape[0] == 0:
        return np.zeros((0, 0))
    return np.asarray(scipy.linalg.expm(M))


def discretize(F: FloatArray, L: FloatArray, Qc: FloatArray, dt: float) -> DiscreteTransition:
    """
    Exact discretization of ``dx/dt = F x + L w`` over a step of length ``dt``.

    The process noise covariance is obtained with Van Loan's construction: the block matrix
    ``[[F, L Qc L^T], [0, -F^T]] h`` is exponentiated and recombined, so no quadrature is involved. The
    ``-F^T`` block grows like ``exp(|F| h)``, so long steps are split into ``2^n`` substeps with ``|F|_1 h <= 1``
    and recombined by doubling, ``A(2h) = A(h)^2`` and ``Q(2h) = A(h) Q(h) A(h)^T + Q(h)``. For a stable ``F``
    this keeps ``(A, Q)`` tending to ``(0, P_inf)`` as ``dt`` grows.

    :param F: Drift matrix, ``d x d``
    :param L: Dispersion matrix, ``d x s``
    :param Qc: White-noise spectral densities, either the diagonal ``s x s`` matrix or its diagonal
    :param dt: Step length, must be positive
    :returns: The ``(A, Q)`` pair of the step
    :raises InvalidInputError: If ``dt <= 0`` or a spectral density is negative
    """
    F = np.asarray(F, dtype=float)
    L = np.asarray(L, dtype=float)
    Qc = np.asarray(Qc, dtype=float)
    if Qc.ndim == 1:
        Qc = np.diag(Qc)

    if not (math.isfinite(dt) and dt > 0.0):
        error_message = f"Time step must be positive and finite, got {dt}"
        raise InvalidInputError(error_message)

    _require_square(F, "F")
    if np.any(np.diag(Qc) < 0.0):
        error_message = "Spectral densities must be non-negative"
        raise InvalidInputError(error_message)

    d = F.shape[0]
    if d == 0:
        return DiscreteTransition(np.zeros((0, 0)), np.zeros((0, 0)))

    G = L @ Qc @ L.T if L.size else np.zeros((d, d))
    norm = float(np.linalg.norm(F, 1)) * dt
    doublings = math.ceil(math.log2(norm / MAX_SUBSTEP_NORM)) if norm > MAX_SUBSTEP_NORM else 0
    h = dt / 2.0**doublings

    block = np.zeros((2 * d, 2 * d))
    block[:d, :d] = F
    block[:d, d:] = G
    block[d:, d:] = -F.T
    E = mat_exp(block * h)

    A = E[:d, :d]
    Q = symmetrize(E[:d, d:] @ A.T)
    for _ in range(doublings):
        Q = symmetrize(A @ Q @ A.T + Q)
        A = A @ A
    return DiscreteTransition(A=A, Q=Q)


def is_hurwitz(F: FloatArray) -> bool:
    """Return True if every eigenvalue of ``F`` has real part below ``-HURWITZ_MARGIN``."""
    F = np.asarray(F, dtype=float)
    if F.shape[0] == 0:
        return True
    return bool(np.max(np.linalg.eigvals(F).real) < -HURWITZ_MARGIN)


def solve_stationary(F_z: FloatArray, L_z: FloatArray, q: float) -> FloatArray:
    """
    Stationary covariance ``P`` of ``dz/dt = F_z z + L_z w`` with white-noise spectral density ``q``.

    Solves ``F_z P + P F_z^T + L_z q L_z^T = 0`` as the vectorized Kronecker system
    ``(I kron F_z + F_z kron I) vec(P) = -vec(L_z q L_z^T)``.

    :raises NoStationarySolutionError: If ``F_z`` is not Hurwitz
    :raises InvalidInputError: If ``q`` is negative
    """
    F_z = np.asarray(F_z, dtype=float)
    _require_square(F_z, "F_z")
    L_z = np.asarray(L_z, dtype=float).reshape(F_z.shape[0], -1)

    if q < 0.0:
        error_message = f"Spectral density must be non-negative, got {q}"
        raise InvalidInputError(error_message)

    if not is_hurwitz(F_z):
        error_message = "Prior dynamics are not Hurwitz; no stationary covariance exists"
        raise NoStationarySolutionError(error_message)

    d = F_z.shape[0]
    G = q * (L_z @ L_z.T)
    eye = np.eye(d)
    operator = np.kron(eye, F_z) + np.kron(F_z, eye)
    P = symmetrize(np.linalg.solve(operator, -G.reshape(-1)).reshape(d, d))

    residual = float(np.linalg.norm(F_z @ P + P @ F_z.T + G))
    bound = LYAPUNOV_TOLERANCE * (float(np.linalg.norm(P)) + q)
    if residual > bound:
        logging.warning("Lyapunov residual %.3e exceeds tolerance %.3e", residual, bound)

    return P


def logpdf_from_cholesky(residual: FloatArray, chol: FloatArray) -> float:
    """Log-density of a zero-mean Gaussian at ``residual`` given the lower Cholesky factor of its covariance."""
    k = residual.shape[0]
    if k == 0:
        return 0.0
    alpha = scipy.linalg.solve_triangular(chol, residual, lower=True)
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return -0.5 * (k * math.log(2.0 * math.pi) + log_det + float(alpha @ alpha))


def gaussian_logpdf(y: FloatArray, m: FloatArray, S: FloatArray) -> float:
    """
    Evaluate ``log N(y; m, S)`` through a Cholesky factorization, never forming ``S^-1``.

    :raises NumericalFailureError: If ``S`` is not positive-definite after jitter
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    m = np.atleast_1d(np.asarray(m, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if y.shape[0] == 0:
        return 0.0
    return logpdf_from_cholesky(y - m, jittered_cholesky(S, "Gaussian covariance"))
