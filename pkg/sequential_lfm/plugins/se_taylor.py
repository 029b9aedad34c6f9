"""The SquaredExponentialPlugin class which approximates squared exponential force priors."""

from typing import TYPE_CHECKING

from sequential_lfm.plugin import ForcePriorFactory, Plugin
from sequential_lfm.priors import PriorSSM, se_taylor_ssm

if TYPE_CHECKING:
    from sequential_lfm.config import ForcePriorConfig


class SquaredExponentialPlugin(Plugin):
    """Plugin registering the ``se_taylor`` family, a Taylor-series state-space approximation."""

    def get_force_priors(self) -> dict[str, ForcePriorFactory]:
        """
        Register force priors for the plugin.

        :returns: A dictionary mapping family names to their factory functions.
        """
        return {
            "se_taylor": self._se_prior,
        }

    def _se_prior(self, force: "ForcePriorConfig", lengthscale: float) -> PriorSSM:
        """Use ``force.order`` states for the approximation."""
        return se_taylor_ssm(lengthscale, force.variance, force.order)
