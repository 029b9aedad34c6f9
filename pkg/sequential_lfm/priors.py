"""
State-space (LTI SDE) representations of Gaussian-process priors for latent forces.

Matérn kernels with half-integer smoothness have an exact finite-dimensional representation; the squared
exponential kernel is approximated by truncating the Taylor series of its inverse spectral density.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.special import comb, gamma

from sequential_lfm.errors import ApproximationFailureError, InvalidInputError
from sequential_lfm.matrixnum import is_hurwitz, solve_stationary
from sequential_lfm.types import FloatArray

MIN_SE_STATES = 2


class MaternSpec(BaseModel):
    """Hyperparameters of a Matérn covariance function with half-integer smoothness."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    nu: float = 1.5
    """Smoothness; ``nu + 1/2`` must be a positive integer."""

    lengthscale: float = Field(gt=0.0)
    """Characteristic time scale of the force."""

    variance: float = Field(default=1.0, gt=0.0)
    """Marginal variance ``sigma^2`` of the force."""

    @field_validator("nu")
    @classmethod
    def _half_integer(cls, nu: float) -> float:
        order = nu + 0.5
        if order < 1.0 or not math.isclose(order, round(order), abs_tol=1e-12):
            error_message = f"Matérn smoothness must be a positive half-integer, got {nu}"
            raise ValueError(error_message)
        return nu

    @property
    def order(self) -> int:
        """State dimension ``nu + 1/2`` of the exact representation."""
        return round(self.nu + 0.5)

    @property
    def rate(self) -> float:
        """Return ``lambda = sqrt(2 nu) / l``."""
        return math.sqrt(2.0 * self.nu) / self.lengthscale


@dataclass(frozen=True, eq=False)
class PriorSSM:
    """Companion-form LTI SDE whose first state component is the latent force."""

    F: FloatArray
    """Companion-form drift matrix, ``p x p``."""

    L: FloatArray
    """Dispersion column, the last unit basis vector."""

    q: float
    """White-noise spectral density."""

    P0: FloatArray
    """Stationary covariance."""

    coeffs: FloatArray
    """Characteristic polynomial coefficients ``a^0 .. a^{p-1}`` (monic polynomial, highest term omitted)."""

    @property
    def dim(self) -> int:
        """Return the state dimension ``p``."""
        return int(self.F.shape[0])

    @property
    def variance(self) -> float:
        """Stationary variance of the force itself."""
        return float(self.P0[0, 0])


def companion_matrix(coeffs: FloatArray) -> FloatArray:
    """Companion drift with ones on the superdiagonal and ``-a^i`` on the last row."""
    p = len(coeffs)
    F = np.diag(np.ones(p - 1), k=1)
    F[-1, :] = -np.asarray(coeffs, dtype=float)
    return F


def _companion_ssm(coeffs: FloatArray, q: float) -> PriorSSM:
    F = companion_matrix(coeffs)
    L = np.zeros((len(coeffs), 1))
    L[-1, 0] = 1.0
    return PriorSSM(F=F, L=L, q=q, P0=solve_stationary(F, L, q), coeffs=np.asarray(coeffs, dtype=float))


def matern_ssm(spec: MaternSpec) -> PriorSSM:
    """
    Exact state-space model of a half-integer Matérn prior.

    The characteristic polynomial is ``(s + lambda)^p`` with ``p = nu + 1/2`` and ``lambda = sqrt(2 nu) / l``; the
    spectral density ``q = 2 sigma^2 sqrt(pi) Gamma(nu + 1/2) lambda^(2 nu) / Gamma(nu)`` makes the stationary
    variance of the force equal ``sigma^2``.

    :param spec: Validated kernel hyperparameters
    :returns: The companion-form prior model with its stationary covariance
    """
    p = spec.order
    lam = spec.rate
    coeffs = np.array([comb(p, i, exact=True) * lam ** (p - i) for i in range(p)], dtype=float)
    q = 2.0 * spec.variance * math.sqrt(math.pi) * gamma(spec.nu + 0.5) * lam ** (2.0 * spec.nu) / gamma(spec.nu)
    return _companion_ssm(coeffs, float(q))


def matern_kernel(tau: float | FloatArray, spec: MaternSpec) -> float | FloatArray:
    """
    Half-integer Matérn covariance at lag ``tau``.

    For ``nu = p + 1/2`` the kernel is
    ``sigma^2 exp(-sqrt(2 nu) tau / l) p! / (2p)! sum_i (p + i)! / (i! (p - i)!) (sqrt(8 nu) tau / l)^(p - i)``.

    :raises InvalidInputError: If a lag is negative
    """
    lags = np.abs(np.asarray(tau, dtype=float))
    if np.any(np.asarray(tau, dtype=float) < 0.0):
        error_message = "Kernel lags must be non-negative"
        raise InvalidInputError(error_message)

    p = spec.order - 1
    r = lags / spec.lengthscale
    poly = np.zeros_like(r)
    for i in range(p + 1):
        weight = math.factorial(p + i) / (math.factorial(i) * math.factorial(p - i))
        poly = poly + weight * (math.sqrt(8.0 * spec.nu) * r) ** (p - i)

    value = spec.variance * np.exp(-math.sqrt(2.0 * spec.nu) * r) * math.factorial(p) / math.factorial(2 * p) * poly
    if np.ndim(value) == 0:
        return float(value)
    return np.asarray(value)


def se_kernel(tau: float | FloatArray, lengthscale: float, variance: float = 1.0) -> float | FloatArray:
    """Squared exponential covariance ``sigma^2 exp(-tau^2 / l^2)``."""
    value = variance * np.exp(-(np.asarray(tau, dtype=float) ** 2) / lengthscale**2)
    if np.ndim(value) == 0:
        return float(value)
    return np.asarray(value)


def se_taylor_ssm(lengthscale: float, variance: float, n_states: int) -> PriorSSM:
    """
    Approximate state-space model of the squared exponential prior ``sigma^2 exp(-tau^2 / l^2)``.

    The kernel's spectral density is ``sigma^2 sqrt(pi) l exp(-l^2 w^2 / 4)``. Its inverse is truncated to a
    Taylor polynomial of order ``n_states`` in ``w^2``; the polynomial roots are split into a stable and an
    unstable half and the stable half forms the transfer-function denominator.

    :param lengthscale: Length-scale ``l``
    :param variance: Amplitude ``sigma^2``
    :param n_states: State dimension, at least 2
    :raises InvalidInputError: For non-positive hyperparameters or too few states
    :raises ApproximationFailureError: If no stable root set is found
    """
    if lengthscale <= 0.0 or variance <= 0.0:
        error_message = "Length-scale and variance must be positive"
        raise InvalidInputError(error_message)
    if n_states < MIN_SE_STATES:
        error_message = f"The squared exponential approximation needs at least {MIN_SE_STATES} states"
        raise InvalidInputError(error_message)

    # Roots of the exponential Taylor polynomial sum_n z^n / n! with z = l^2 w^2 / 4 = -l^2 s^2 / 4.
    taylor = np.array([1.0 / math.factorial(n) for n in range(n_states, -1, -1)])
    z_roots = np.roots(taylor)
    s_roots = -(2.0 / lengthscale) * np.sqrt(-z_roots.astype(complex))

    if np.any(s_roots.real >= 0.0):
        error_message = "Spectral factorization produced no stable root set"
        raise ApproximationFailureError(error_message)

    poly = np.poly(s_roots)
    if np.max(np.abs(poly.imag)) > 1e-8 * np.max(np.abs(poly.real)):
        error_message = "Spectral factorization produced complex polynomial coefficients"
        raise ApproximationFailureError(error_message)

    # np.poly returns the monic polynomial highest power first; the companion form wants a^0 .. a^{p-1}.
    coeffs = poly.real[1:][::-1]
    leading = (lengthscale**2 / 4.0) ** n_states / math.factorial(n_states)
    q = variance * math.sqrt(math.pi) * lengthscale / leading

    ssm = _companion_ssm(coeffs, q)
    if not is_hurwitz(ssm.F):
        error_message = "Approximated squared exponential dynamics are not stable"
        raise ApproximationFailureError(error_message)

    logging.debug(
        "SE approximation with %i states: stationary variance %.6g (target %.6g)",
        n_states,
        ssm.variance,
        variance,
    )
    return ssm
