"""Constitutive parameter records for linear thermo- and poroelasticity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError


@dataclass(frozen=True)
class ThermoMaterial:
    """Isotropic thermoelastic solid.  SI units; ``t_ref`` is the reference temperature T0."""

    lam: float
    mu: float
    alpha: float
    rho: float
    c_eps: float
    k_cond: float
    t_ref: float = 293.0
    n_dim: int = 2

    def __post_init__(self):
        if not self.mu > 0:
            raise InvalidArgumentError("mu must be positive")
        if not self.lam + 2.0 * self.mu / 3.0 > 0:
            raise InvalidArgumentError("lambda + 2 mu / 3 must be positive")
        for name in ("rho", "c_eps", "k_cond"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.n_dim not in (2, 3):
            raise InvalidArgumentError("n_dim must be 2 or 3")

    @property
    def beta(self) -> float:
        """Thermal stress modulus alpha * (n_dim * lambda + 2 mu)."""
        return self.alpha * (self.n_dim * self.lam + 2.0 * self.mu)

    @property
    def heat_capacity(self) -> float:
        return self.rho * self.c_eps


@dataclass(frozen=True)
class PoroMaterial:
    """Biot poroelastic medium with isotropic hydraulic conductivity K_H (m/s).

    ``gravity_dir`` is the unit vector opposite to gravity; ``None`` switches
    the gravity term off.
    """

    lam: float
    mu: float
    k_solid: float
    k_fluid: float
    porosity: float
    hydraulic_conductivity: float
    fluid_weight_density: float = 9810.0
    gravity_dir: tuple[float, ...] | None = None
    n_dim: int = 2

    def __post_init__(self):
        if not self.mu > 0:
            raise InvalidArgumentError("mu must be positive")
        if not 0 < self.porosity < 1:
            raise InvalidArgumentError("porosity must lie in (0, 1)")
        for name in ("k_solid", "k_fluid", "hydraulic_conductivity", "fluid_weight_density"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.gravity_dir is not None:
            g = np.asarray(self.gravity_dir, dtype=float)
            if g.shape != (self.n_dim,) or not np.isclose(np.linalg.norm(g), 1.0):
                raise InvalidArgumentError("gravity_dir must be a unit vector with n_dim entries")
        if self.biot_modulus_inv < 0:
            raise InvalidArgumentError("parameters give a negative 1/M")

    @property
    def bulk_modulus(self) -> float:
        return self.lam + 2.0 * self.mu / 3.0

    @property
    def biot_alpha(self) -> float:
        return 1.0 - self.bulk_modulus / self.k_solid

    @property
    def biot_modulus_inv(self) -> float:
        return self.porosity / self.k_fluid + (self.biot_alpha - self.porosity) / self.k_solid

    @property
    def mobility(self) -> float:
        """K_I / mu_f = K_H / gamma_f."""
        return self.hydraulic_conductivity / self.fluid_weight_density

    @property
    def consolidation_coefficient(self) -> float:
        """Oedometric consolidation coefficient used by the Terzaghi oracle."""
        return self.mobility / (self.biot_modulus_inv + self.biot_alpha ** 2 / (self.lam + 2.0 * self.mu))
