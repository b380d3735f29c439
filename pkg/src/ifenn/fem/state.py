from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class TransientState:
    """Nodal fields at one time level.

    ``u`` is ``[n_nodes, dim]``; ``z`` is the absolute coupled scalar
    (temperature in K, or pore pressure in Pa); ``strain_trace`` is the
    lumped-projection nodal tr(eps).
    """

    step: int
    time: float
    u: np.ndarray
    z: np.ndarray
    strain_trace: np.ndarray

    def copy(self) -> "TransientState":
        return TransientState(self.step, self.time, self.u.copy(), self.z.copy(), self.strain_trace.copy())
