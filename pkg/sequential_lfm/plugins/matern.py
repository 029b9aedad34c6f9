"""The MaternPlugin class which provides exact half-integer Matérn force priors."""

from typing import TYPE_CHECKING

from sequential_lfm.plugin import ForcePriorFactory, Plugin
from sequential_lfm.priors import MaternSpec, PriorSSM, matern_ssm

if TYPE_CHECKING:
    from sequential_lfm.config import ForcePriorConfig


class MaternPlugin(Plugin):
    """Plugin registering the ``matern`` force-prior family."""

    def get_force_priors(self) -> dict[str, ForcePriorFactory]:
        """
        Register force priors for the plugin.

        :returns: A dictionary mapping family names to their factory functions.
        """
        return {
            "matern": self._matern_prior,
        }

    def _matern_prior(self, force: "ForcePriorConfig", lengthscale: float) -> PriorSSM:
        return matern_ssm(MaternSpec(nu=force.nu, lengthscale=lengthscale, variance=force.variance))
