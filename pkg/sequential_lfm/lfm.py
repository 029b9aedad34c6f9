"""
Latent force model assembly.

Second-order mechanistic output ODEs ``A_d x_d'' + C_d x_d' + kappa_d x_d = sum_r S_dr u_r`` are written in
companion state-space form and augmented with the state-space priors of the latent forces ``u_r``.

Sign convention: the force enters the output derivative with ``+S_dr / A_d``, as in the ODE above.
"""

from collections.abc import Sequence
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from sequential_lfm.errors import InvalidInputError
from sequential_lfm.matrixnum import DiscreteTransition, Gaussian, discretize
from sequential_lfm.priors import PriorSSM
from sequential_lfm.types import FloatArray, SlotKind

OUTPUT_ORDER = 2


class OutputModelSpec(BaseModel):
    """Parameters of ``D`` second-order output ODEs driven by ``R`` forces."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    masses: list[float]
    """Leading coefficients ``A_d``; must be non-zero."""

    dampings: list[float]
    """First-derivative coefficients ``C_d``."""

    springs: list[float]
    """Zeroth-derivative coefficients ``kappa_d``."""

    sensitivities: list[list[float]]
    """``D x R`` sensitivities ``S_dr`` of output ``d`` to force ``r``."""

    @model_validator(mode="after")
    def validate_dimensions(self) -> "OutputModelSpec":
        """
        Validate that every per-output list has ``D`` entries and the sensitivities are ``D x R``.

        :returns: The validated spec
        :raises ValueError: If the dimensions disagree or a mass is zero
        """
        n_outputs = len(self.masses)
        if n_outputs < 1:
            error_message = "At least one output is required"
            raise ValueError(error_message)

        for name in ("dampings", "springs", "sensitivities"):
            if len(getattr(self, name)) != n_outputs:
                error_message = f"{name}: expected {n_outputs} entries, got {len(getattr(self, name))}"
                raise ValueError(error_message)

        widths = {len(row) for row in self.sensitivities}
        if len(widths) != 1 or widths == {0}:
            error_message = "sensitivities: every row must have the same, non-zero number of forces"
            raise ValueError(error_message)

        if any(mass == 0.0 for mass in self.masses):
            error_message = "masses: every output needs a non-zero mass"
            raise ValueError(error_message)

        return self

    @property
    def n_outputs(self) -> int:
        """Return ``D``."""
        return len(self.masses)

    @property
    def n_forces(self) -> int:
        """Return ``R``."""
        return len(self.sensitivities[0])

    @property
    def sensitivity_matrix(self) -> FloatArray:
        """Sensitivities as a ``D x R`` array."""
        return np.asarray(self.sensitivities, dtype=float)


@dataclass(frozen=True)
class StateSlot:
    """One named component of the augmented state vector."""

    name: str
    kind: SlotKind
    index: int
    """One-based output or force number the slot belongs to."""

    derivative: int = 0


@dataclass(frozen=True)
class StateLayout:
    """Index map naming each slot of the augmented state."""

    slots: tuple[StateSlot, ...]
    n_output_states: int
    force_blocks: tuple[slice, ...]

    @cached_property
    def _lookup(self) -> dict[str, int]:
        return {slot.name: i for i, slot in enumerate(self.slots)}

    @property
    def names(self) -> tuple[str, ...]:
        """Slot names in state order."""
        return tuple(slot.name for slot in self.slots)

    @property
    def dim(self) -> int:
        """Return the total state dimension."""
        return len(self.slots)

    @property
    def output_block(self) -> slice:
        """Slice of the output (non-augmented) part of the state."""
        return slice(0, self.n_output_states)

    @property
    def force_block(self) -> slice:
        """Slice of all force components."""
        return slice(self.n_output_states, self.dim)

    def index(self, name: str) -> int:
        """
        Position of a named slot.

        :raises InvalidInputError: If the slot does not exist
        """
        try:
            return self._lookup[name]
        except KeyError:
            error_message = f"Unknown state slot '{name}'; known slots: {', '.join(self.names)}"
            raise InvalidInputError(error_message) from None

    def output_slots(self) -> list[str]:
        """Names of the output positions ``x1 .. xD``."""
        return [slot.name for slot in self.slots if slot.kind == "output"]

    @classmethod
    def build(cls, n_outputs: int, force_dims: Sequence[int]) -> "StateLayout":
        """Lay out ``x_d, dx_d`` pairs for each output followed by each force block ``u_r, u_r_d1, ...``."""
        slots: list[StateSlot] = []
        for d in range(1, n_outputs + 1):
            slots.append(StateSlot(f"x{d}", "output", d))
            slots.append(StateSlot(f"dx{d}", "output_derivative", d, 1))

        blocks: list[slice] = []
        for r, dim in enumerate(force_dims, start=1):
            start = len(slots)
            slots.append(StateSlot(f"u{r}", "force", r))
            slots.extend(StateSlot(f"u{r}_d{j}", "force_derivative", r, j) for j in range(1, dim))
            blocks.append(slice(start, len(slots)))

        return cls(slots=tuple(slots), n_output_states=OUTPUT_ORDER * n_outputs, force_blocks=tuple(blocks))


@dataclass(frozen=True, eq=False)
class ContinuousModel:
    """The augmented LTI SDE ``dx_a/dt = F_a x_a + L_a w_a`` with its initial Gaussian."""

    F: FloatArray
    """Augmented drift ``F_a``."""

    L: FloatArray
    """Augmented dispersion ``L_a``; white noise only enters the last slot of each force block."""

    Qc: FloatArray
    """Diagonal ``R x R`` white-noise spectral densities ``q_r``."""

    layout: StateLayout

    prior: Gaussian
    """Initial state ``N(m^0, P^0)`` at the first time of a grid."""

    priors: tuple[PriorSSM, ...]

    input_matrix: FloatArray
    """Output-model input matrix (``+S_dr / A_d`` rows), used for reset transitions."""

    @property
    def dim(self) -> int:
        """Return the augmented state dimension ``n``."""
        return int(self.F.shape[0])

    @property
    def output_F(self) -> FloatArray:
        """Drift of the output model alone."""
        block = self.layout.output_block
        return self.F[block, block]

    @property
    def stationary_force_cov(self) -> FloatArray:
        """Block diagonal of the force priors' stationary covariances."""
        block = self.layout.force_block
        return np.asarray(self.prior.cov[block, block])

    def transition(self, dt: float) -> DiscreteTransition:
        """Exact ``(A, Q)`` of the augmented model over ``dt``."""
        return discretize(self.F, self.L, self.Qc, dt)


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    """Linear-Gaussian observation ``y_k = H x_k + r_k``, ``r_k ~ N(0, R)``."""

    H: FloatArray
    R: FloatArray

    def __post_init__(self) -> None:
        """Validate the shapes and symmetry of the observation model."""
        if self.R.shape != (self.H.shape[0], self.H.shape[0]):
            error_message = f"Noise covariance shape {self.R.shape} does not match {self.H.shape[0]} observations"
            raise InvalidInputError(error_message)
        if not np.allclose(self.R, self.R.T):
            error_message = "Observation noise covariance must be symmetric"
            raise InvalidInputError(error_message)

    @property
    def n_observations(self) -> int:
        """Return the observation dimension ``m``."""
        return int(self.H.shape[0])

    def masked(self, observed: np.ndarray) -> tuple[FloatArray, FloatArray]:
        """Rows of ``H`` and rows/columns of ``R`` for the observed entries only."""
        return self.H[observed], self.R[np.ix_(observed, observed)]

    @classmethod
    def from_slots(
        cls,
        layout: StateLayout,
        names: Sequence[str],
        noise_variance: float | Sequence[float],
    ) -> "MeasurementModel":
        """
        Observe the named state slots directly, each with independent noise.

        :param layout: Layout of the observed model
        :param names: Slot names, one per observation row
        :param noise_variance: Shared or per-row noise variance
        """
        H = np.zeros((len(names), layout.dim))
        for row, name in enumerate(names):
            H[row, layout.index(name)] = 1.0

        variances = np.broadcast_to(np.asarray(noise_variance, dtype=float), (len(names),))
        if np.any(variances < 0.0):
            error_message = "Observation noise variances must be non-negative"
            raise InvalidInputError(error_message)

        return cls(H=H, R=np.diag(variances))


def build_output_ssm(spec: OutputModelSpec) -> tuple[FloatArray, FloatArray]:
    """
    Block-companion state-space form of the second-order output ODEs.

    :param spec: Output model parameters
    :returns: ``F`` (``2D x 2D``) with blocks ``[[0, 1], [-kappa/A, -C/A]]`` and ``L`` (``2D x R``) with rows
              ``[0; S_dr / A_d]``
    :raises InvalidInputError: If a mass is zero
    """
    n_outputs, n_forces = spec.n_outputs, spec.n_forces
    F = np.zeros((OUTPUT_ORDER * n_outputs, OUTPUT_ORDER * n_outputs))
    L = np.zeros((OUTPUT_ORDER * n_outputs, n_forces))
    S = spec.sensitivity_matrix

    for d in range(n_outputs):
        mass = spec.masses[d]
        if mass == 0.0:
            error_message = f"Output {d + 1} has zero mass"
            raise InvalidInputError(error_message)

        i = OUTPUT_ORDER * d
        F[i, i + 1] = 1.0
        F[i + 1, i] = -spec.springs[d] / mass
        F[i + 1, i + 1] = -spec.dampings[d] / mass
        L[i + 1, :] = S[d, :] / mass

    return F, L


def augment(
    F: FloatArray,
    L: FloatArray,
    priors: Sequence[PriorSSM],
    wiring: Sequence[int] | None = None,
    px0_variance: float = 1.0,
) -> ContinuousModel:
    """
    Join an output model with force priors into one LTI SDE.

    :param F: Output-model drift, ``2D x 2D``
    :param L: Output-model input matrix, one column per force input
    :param priors: One state-space prior per force
    :param wiring: For each column of ``L``, the index of the prior driving it; defaults to column ``r`` -> prior
                   ``r``
    :param px0_variance: Variance of the isotropic initial covariance of the output block
    :raises InvalidInputError: If the wiring references an unknown force or the dimensions disagree
    """
    F = np.asarray(F, dtype=float)
    L = np.asarray(L, dtype=float)
    if L.ndim == 1:
        L = L[:, np.newaxis]
    nx = F.shape[0]

    if wiring is None:
        if L.shape[1] != len(priors):
            error_message = f"Output model has {L.shape[1]} force inputs but {len(priors)} priors were given"
            raise InvalidInputError(error_message)
        wiring = list(range(len(priors)))

    if len(wiring) != L.shape[1]:
        error_message = f"Wiring has {len(wiring)} entries for {L.shape[1]} force inputs"
        raise InvalidInputError(error_message)

    for target in wiring:
        if not 0 <= target < len(priors):
            error_message = f"Wiring references unknown force index {target}"
            raise InvalidInputError(error_message)

    if nx % OUTPUT_ORDER:
        error_message = f"Output state dimension must be a multiple of {OUTPUT_ORDER}, got {nx}"
        raise InvalidInputError(error_message)

    layout = StateLayout.build(nx // OUTPUT_ORDER, [prior.dim for prior in priors])
    n = layout.dim

    F_a = np.zeros((n, n))
    L_a = np.zeros((n, len(priors)))
    F_a[:nx, :nx] = F
    input_matrix = np.zeros((nx, len(priors)))

    for column, target in enumerate(wiring):
        input_matrix[:, target] += L[:, column]

    for r, (prior, block) in enumerate(zip(priors, layout.force_blocks, strict=True)):
        F_a[block, block] = prior.F
        F_a[:nx, block.start] = input_matrix[:, r]
        L_a[block.stop - 1, r] = 1.0

    Qc = np.diag([prior.q for prior in priors]) if priors else np.zeros((0, 0))

    model = ContinuousModel(
        F=F_a,
        L=L_a,
        Qc=Qc,
        layout=layout,
        prior=Gaussian(np.zeros(n), np.zeros((n, n))),
        priors=tuple(priors),
        input_matrix=input_matrix,
    )
    return replace(model, prior=initial_state(model, px0_variance * np.eye(nx)))


def initial_state(model: ContinuousModel, Px0: FloatArray) -> Gaussian:
    """
    Zero-mean initial Gaussian ``P^0 = blkdiag(P_x^0, P_u1^0, ..., P_uR^0)`` with stationary force blocks.

    :raises InvalidInputError: If ``Px0`` has the wrong dimension or is not symmetric
    """
    Px0 = np.asarray(Px0, dtype=float)
    nx = model.layout.n_output_states
    if Px0.shape != (nx, nx):
        error_message = f"Output prior covariance must be {nx}x{nx}, got {Px0.shape}"
        raise InvalidInputError(error_message)
    if not np.allclose(Px0, Px0.T):
        error_message = "Output prior covariance must be symmetric"
        raise InvalidInputError(error_message)

    P0 = np.zeros((model.dim, model.dim))
    P0[:nx, :nx] = Px0
    for prior, block in zip(model.priors, model.layout.force_blocks, strict=True):
        P0[block, block] = prior.P0

    return Gaussian(np.zeros(model.dim), P0)


def build_lfm(spec: OutputModelSpec, priors: Sequence[PriorSSM], px0_variance: float = 1.0) -> ContinuousModel:
    """Build the output model of ``spec`` and augment it with ``priors``."""
    F, L = build_output_ssm(spec)
    return augment(F, L, priors, px0_variance=px0_variance)


def prior_model(prior: PriorSSM) -> ContinuousModel:
    """A model consisting of a single force block and no outputs."""
    return augment(np.zeros((0, 0)), np.zeros((0, 1)), [prior])


def observe_outputs(model: ContinuousModel, noise_variance: float | Sequence[float]) -> MeasurementModel:
    """Measurement model observing every output position ``x1 .. xD``."""
    return MeasurementModel.from_slots(model.layout, model.layout.output_slots(), noise_variance)
