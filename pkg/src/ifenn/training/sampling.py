"""Random load-history families and deterministic case sampling.

Every case is regenerated from ``(seed, id)`` alone, so a dataset can be
rebuilt case by case without replaying the whole stream.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ..errors import InvalidArgumentError

FAMILIES = ("cube-body", "tube-flux", "excavation-flux")


def _se_cholesky(points: np.ndarray, length: float, jitter: float = 1e-10) -> np.ndarray:
    """Cholesky factor of a unit-variance squared-exponential covariance."""
    d = points[:, None] - points[None, :]
    k = np.exp(-0.5 * (d / length) ** 2)
    return np.linalg.cholesky(k + jitter * np.eye(len(points)))


@dataclass(frozen=True)
class LoadCase:
    id: int
    family: str
    parameters: dict
    values: np.ndarray | None = None   # [N_t, N_l] load samples at the load sensors


@dataclass(frozen=True)
class GaussianBodyFamily:
    """Space-time Gaussian random field on a coarse control grid.

    Control values follow a separable squared-exponential covariance with
    marginal standard deviation ``std`` about ``mean``; between control
    points the field is multilinear in space and time.
    """

    extent: tuple[float, ...] = (1.0, 1.0)
    t_end: float = 3600.0
    mean: float = 5000.0
    std: float = 2500.0
    length_space: float = 0.4
    length_time: float = 1800.0
    control_space: int = 5
    control_time: int = 5
    name: str = "cube-body"

    def axes(self) -> list[np.ndarray]:
        ax = [np.linspace(0.0, self.t_end, self.control_time)]
        return ax + [np.linspace(0.0, e, self.control_space) for e in self.extent]

    def sample(self, rng: np.random.Generator) -> dict:
        axes = self.axes()
        factors = [_se_cholesky(axes[0], self.length_time)]
        factors += [_se_cholesky(a, self.length_space) for a in axes[1:]]
        xi = rng.standard_normal([len(a) for a in axes])
        for k, L in enumerate(factors):
            xi = np.moveaxis(np.tensordot(L, xi, axes=(1, k)), 0, k)
        return {"control": self.mean + self.std * xi}

    def field(self, params: dict) -> Callable[[np.ndarray, float], np.ndarray]:
        interp = RegularGridInterpolator(self.axes(), params["control"])
        lo = np.zeros(len(self.extent))
        hi = np.asarray(self.extent, dtype=float)

        def fn(x, t):
            x = np.asarray(x, dtype=float)
            flat = np.clip(x.reshape(-1, x.shape[-1]), lo, hi)
            tt = np.full((flat.shape[0], 1), min(max(float(t), 0.0), self.t_end))
            return interp(np.hstack([tt, flat])).reshape(x.shape[:-1])

        return fn


_TUBE_BOUNDS = {
    "q_in_0": (-3000.0, 3000.0),
    "q_in_1": (0.0, 3000.0),
    "q_out_0": (-3000.0, 3000.0),
    "q_out_1": (0.0, 3000.0),
    "omega_in_r": (1.0, 4.0),
    "omega_out_r": (1.0, 4.0),
    "omega_t": (1.0, 4.0),    # in units of 2 pi / t_end
}


@dataclass(frozen=True)
class TubeFluxFamily:
    """Wall heat fluxes ``q(theta, t) = q0 + q1 sin(omega_t t) sin(omega_r theta)``."""

    t_end: float = 60000.0
    bounds: dict = field(default_factory=lambda: dict(_TUBE_BOUNDS))
    name: str = "tube-flux"

    def sample(self, rng: np.random.Generator) -> dict:
        p = {k: float(rng.uniform(*self.bounds[k])) for k in _TUBE_BOUNDS}
        p["omega_t"] *= 2.0 * np.pi / self.t_end
        return p

    @staticmethod
    def flux(params: dict, wall: str) -> Callable[[np.ndarray, float], np.ndarray]:
        if wall not in ("in", "out"):
            raise InvalidArgumentError(f"wall must be 'in' or 'out', got {wall!r}")
        q0, q1 = params[f"q_{wall}_0"], params[f"q_{wall}_1"]
        wr, wt = params[f"omega_{wall}_r"], params["omega_t"]

        def fn(x, t):
            x = np.asarray(x, dtype=float)
            theta = np.arctan2(x[..., 1], x[..., 0])
            return q0 + q1 * np.sin(wt * t) * np.sin(wr * theta)

        return fn


@dataclass(frozen=True)
class DewateringFamily:
    """Gaussian random history of a uniform extraction flux (m/s)."""

    t_end: float = 3.0e6
    mean: float = 2.0e-5
    std: float = 1.0e-5
    length_time: float = 6.0e5
    control_time: int = 13
    name: str = "excavation-flux"

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.control_time)

    def sample(self, rng: np.random.Generator) -> dict:
        L = _se_cholesky(self.times(), self.length_time)
        return {"control": self.mean + self.std * (L @ rng.standard_normal(self.control_time))}

    def history(self, params: dict) -> Callable[[float], float]:
        tc = self.times()
        ctrl = np.asarray(params["control"], dtype=float)
        return lambda t: float(np.interp(t, tc, ctrl))


def default_family(name: str):
    families = {"cube-body": GaussianBodyFamily, "tube-flux": TubeFluxFamily,
                "excavation-flux": DewateringFamily}
    if name not in families:
        raise InvalidArgumentError(f"unknown load family {name!r}; choose from {FAMILIES}")
    return families[name]()


def sample_load_cases(family, count: int, seed: int, values: Callable[[LoadCase], np.ndarray] | None = None,
                      first_id: int = 0) -> list[LoadCase]:
    """``count`` cases with ids ``first_id, first_id + 1, ...``.

    ``family`` is a family object or one of :data:`FAMILIES`.  If ``values``
    is given it maps a case to its ``[N_t, N_l]`` sensor samples, which are
    stored on the returned cases.
    """
    if isinstance(family, str):
        family = default_family(family)
    if int(count) < 1:
        raise InvalidArgumentError(f"count must be >= 1, got {count}")
    cases = []
    for cid in range(int(first_id), int(first_id) + int(count)):
        rng = np.random.default_rng([int(seed), cid])
        case = LoadCase(cid, family.name, family.sample(rng))
        if values is not None:
            case = LoadCase(cid, family.name, case.parameters, np.asarray(values(case), dtype=float))
        cases.append(case)
    return cases
