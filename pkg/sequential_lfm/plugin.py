"""Defines the Plugin base class for registering force-prior families."""

from collections.abc import Callable
from typing import TYPE_CHECKING

from sequential_lfm.priors import PriorSSM

if TYPE_CHECKING:
    from sequential_lfm.config import ForcePriorConfig

ForcePriorFactory = Callable[["ForcePriorConfig", float], PriorSSM]


class Plugin:
    """Base class for plugins."""

    @property
    def name(self) -> str:
        """
        Name of the plugin.

        The name is only used to identify the plugin in the registry and in logging statements. The base
        implementation returns the name of the class.

        :returns: The name of the plugin
        """
        return self.__class__.__name__

    def get_force_priors(self) -> dict[str, ForcePriorFactory]:
        """
        Register force-prior families.

        Each factory receives the ``force`` section of the experiment configuration and one length-scale and
        returns the state-space prior of a single force. The family name must match ``force.family`` in the
        configuration for it to be used.

        :returns: A dictionary mapping family names to their factory functions.
        """
        return {}
