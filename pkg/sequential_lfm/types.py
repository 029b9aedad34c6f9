"""Defines type aliases shared across the sequential LFM modules."""

from typing import Literal

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]
CommandName = Literal["simulate", "smooth", "segment", "fit"]
SlotKind = Literal["output", "output_derivative", "force", "force_derivative"]
