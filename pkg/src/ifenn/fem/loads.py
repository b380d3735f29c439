"""Load and boundary-condition records consumed by the assemblers.

Field callables take physical points ``x[..., dim]`` and a time ``t`` and
return values shaped ``x.shape[:-1]`` (scalars) or ``x.shape`` (vectors).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from ..errors import InvalidArgumentError, NotFoundError

FieldFn = Callable[[np.ndarray, float], np.ndarray]
Value = Union[float, FieldFn]

_FIELDS = ("u", "ux", "uy", "uz", "z")


@dataclass(frozen=True)
class Dirichlet:
    """Prescribed value on every node of a boundary tag.

    ``field`` is ``"u"`` (all displacement components), ``"ux"``/``"uy"``/``"uz"``
    or ``"z"`` (the coupled scalar: absolute temperature or pressure).
    """

    tag: str
    field: str
    value: Value = 0.0

    def __post_init__(self):
        if self.field not in _FIELDS:
            raise InvalidArgumentError(f"unknown Dirichlet field {self.field!r}")

    def evaluate(self, x: np.ndarray, t: float, n_dim: int) -> np.ndarray:
        if callable(self.value):
            v = np.asarray(self.value(x, t), dtype=float)
        else:
            v = np.asarray(self.value, dtype=float)
        shape = (x.shape[0], n_dim) if self.field == "u" else (x.shape[0],)
        return np.broadcast_to(v, shape).astype(float)


@dataclass
class LoadSpec:
    body_force: FieldFn | None = None
    traction: dict[str, FieldFn] = field(default_factory=dict)
    heat_source: FieldFn | None = None
    boundary_heat_flux: dict[str, FieldFn] = field(default_factory=dict)
    fluid_source: FieldFn | None = None
    boundary_fluid_flux: dict[str, FieldFn] = field(default_factory=dict)
    dirichlet: list[Dirichlet] = field(default_factory=list)

    def validate(self, mesh):
        tags = set(mesh.boundary)
        used = set(self.traction) | set(self.boundary_heat_flux) | set(self.boundary_fluid_flux)
        used |= {d.tag for d in self.dirichlet}
        missing = used - tags
        if missing:
            raise NotFoundError(f"load references unknown boundary tags {sorted(missing)}")

    def mechanical_only(self) -> "LoadSpec":
        """Copy keeping only what the mechanics-only solve consumes."""
        return LoadSpec(
            body_force=self.body_force,
            traction=dict(self.traction),
            dirichlet=[d for d in self.dirichlet if d.field != "z"],
        )


def constant(value) -> FieldFn:
    value = np.asarray(value, dtype=float)

    def fn(x, t):
        shape = x.shape[:-1] + value.shape
        return np.broadcast_to(value, shape)

    return fn
